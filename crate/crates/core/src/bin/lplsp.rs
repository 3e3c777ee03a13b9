fn main() {
    std::process::exit(lplsp::cli::run());
}
