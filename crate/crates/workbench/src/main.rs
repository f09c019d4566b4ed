fn main() {
    std::process::exit(recourse::cli::main(std::env::args_os()));
}
