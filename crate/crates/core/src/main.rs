fn main() {
    std::process::exit(ecopart::cli::main_with_args(std::env::args_os()));
}
