fn main() {
    std::process::exit(hosp_cli::main_with_args(std::env::args_os()));
}
