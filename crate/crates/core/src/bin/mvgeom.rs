fn main() {
    std::process::exit(mvgeom::cli::main_with_args(std::env::args_os()));
}
