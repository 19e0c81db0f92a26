fn main() {
    let code = poshap::cli::run(std::env::args().skip(1));
    std::process::exit(code);
}
