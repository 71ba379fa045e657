fn main() {
    std::process::exit(rga::cli::main_with_args(std::env::args_os()));
}
