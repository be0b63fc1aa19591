fn main() {
    std::process::exit(polardet::cli::main_exit_code());
}
