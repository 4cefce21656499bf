fn main() {
    std::process::exit(unfold_restore::cli::main_with_args(std::env::args_os()));
}
