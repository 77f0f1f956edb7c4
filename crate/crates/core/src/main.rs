fn main() {
    std::process::exit(odebundle::cli::main_with_args(std::env::args_os()));
}
