fn main() {
    std::process::exit(copert_cli::run_command(std::env::args_os()));
}
