fn main() {
    let code = exrw_core::cli::run(std::env::args_os());
    std::process::exit(code);
}
