fn main() {
    let result = wrinkleforge_cli::dispatch(std::env::args_os());
    std::process::exit(result.exit_code);
}
