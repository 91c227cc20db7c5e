fn main() {
    eprintln!("holdfast: not yet wired up");
    std::process::exit(2);
}
