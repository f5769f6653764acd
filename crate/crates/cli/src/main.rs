fn main() {
    std::process::exit(ot_dualex_cli::main_with_args(std::env::args_os()));
}
