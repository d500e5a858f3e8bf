fn main() {
    std::process::exit(ratelim::cli::main());
}
