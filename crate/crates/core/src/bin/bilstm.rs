fn main() {
    std::process::exit(bilstm::cli::main_with_args(std::env::args_os()));
}
