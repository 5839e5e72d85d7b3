fn main() {
    std::process::exit(dlc_core::cli::main_from_env());
}
