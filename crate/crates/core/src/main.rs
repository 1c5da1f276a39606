fn main() {
    std::process::exit(amsgrad::cli::main_with_args(std::env::args_os()));
}
