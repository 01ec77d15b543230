fn main() {
    std::process::exit(wlfusion::cli::run());
}
