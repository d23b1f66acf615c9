fn main() {
    std::process::exit(rydsim::cli::main_with_args());
}
