fn main() {
    std::process::exit(neumann_mc::cli::main_with_args(std::env::args_os()));
}
