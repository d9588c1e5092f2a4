fn main() {
    eprintln!("metabokg: command-line driver not wired up yet");
    std::process::exit(2);
}
