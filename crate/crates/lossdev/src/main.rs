fn main() {
    std::process::exit(lossdev::cli::main_from(std::env::args_os()));
}
