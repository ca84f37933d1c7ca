fn main() {
    std::process::exit(hcmr_server::cmd::main_with_args(std::env::args()));
}
