fn main() {
    std::process::exit(hcmr_cli::main_from_env());
}
