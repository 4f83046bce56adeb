fn main() {
    std::process::exit(worldcast::cli::run());
}
