fn main() {
    std::process::exit(vflguard::cli::main_with(std::env::args_os()));
}
