fn main() {
    std::process::exit(rrdps_oam::cli::main_with_args(std::env::args_os()));
}
