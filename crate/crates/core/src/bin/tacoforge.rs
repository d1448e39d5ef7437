fn main() {
    std::process::exit(tacoforge::cli::main_exit_code());
}
