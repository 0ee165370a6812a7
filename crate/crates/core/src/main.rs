fn main() {
    std::process::exit(decentrl::cli::main_from_env());
}
