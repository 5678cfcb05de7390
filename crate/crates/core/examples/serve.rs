//! Runs the tutor API on port 8080 (or the first argument).

use std::sync::Arc;

use metaplan::tutor::{http, TutorService};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let port: u16 = std::env::args().nth(1).and_then(|p| p.parse().ok()).unwrap_or(8080);
    let svc = Arc::new(TutorService::from_env()?);
    println!("tutor on http://127.0.0.1:{port}");
    http::serve(svc, ([127, 0, 0, 1], port).into()).await?;
    Ok(())
}
