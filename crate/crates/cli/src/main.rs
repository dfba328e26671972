fn main() {
    std::process::exit(kiim_cli::run(std::env::args_os()));
}
