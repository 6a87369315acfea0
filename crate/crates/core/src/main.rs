fn main() {
    std::process::exit(perception_magnifier::cli::main_with_args(
        std::env::args_os(),
    ));
}
