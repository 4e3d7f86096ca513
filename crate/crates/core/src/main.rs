fn main() {
    std::process::exit(doa_feedback::cli::main_with_args(std::env::args_os()));
}
