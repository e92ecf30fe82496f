fn main() {
    std::process::exit(motiondepth::cli::run(std::env::args_os()));
}
