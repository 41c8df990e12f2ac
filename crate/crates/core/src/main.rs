fn main() {
    let stdout = std::io::stdout();
    let code = popo::cli::main_with(std::env::args_os(), &mut stdout.lock());
    std::process::exit(code);
}
