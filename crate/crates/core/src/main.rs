fn main() {
    std::process::exit(nncert::cli::main_with_args(std::env::args_os()));
}
