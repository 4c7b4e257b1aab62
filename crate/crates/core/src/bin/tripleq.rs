fn main() {
    std::process::exit(tripleq::cli::main_with_args(std::env::args_os()));
}
