fn main() {
    std::process::exit(groupdeconv::cli::main_with_args(std::env::args_os()));
}
