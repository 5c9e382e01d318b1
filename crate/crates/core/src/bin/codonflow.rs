fn main() {
    std::process::exit(codonflow::cli::main_with_args(std::env::args_os()));
}
