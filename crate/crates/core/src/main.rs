fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MVFCNN_LOG", "warn")).init();
    std::process::exit(mvfcnn::cli::run(std::env::args_os()));
}
