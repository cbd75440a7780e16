fn main() {
    std::process::exit(hgul::cli::main_with_args(std::env::args_os()));
}
