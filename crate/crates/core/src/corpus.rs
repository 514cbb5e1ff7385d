//! The bundled example workflows.

/// `(file stem, document text)` for every bundled workflow.
pub const WORKFLOWS: &[(&str, &str)] = &[
    ("Customer-Care-Sentiment-Analysis", include_str!("../workflows/Customer-Care-Sentiment-Analysis.json")),
    ("Dynamic-Input-Example-Apple", include_str!("../workflows/Dynamic-Input-Example-Apple.json")),
    ("5G-RAN-data", include_str!("../workflows/5G-RAN-data.json")),
    ("Ecommerce", include_str!("../workflows/Ecommerce.json")),
    ("foodtruck-website", include_str!("../workflows/foodtruck-website.json")),
    ("XML-formatter", include_str!("../workflows/XML-formatter.json")),
    (
        "Simple-Quantum-Circuit-Creator-And-Executor",
        include_str!("../workflows/Simple-Quantum-Circuit-Creator-And-Executor.json"),
    ),
    ("PingServer", include_str!("../workflows/PingServer.json")),
    ("Realtime-Action-Beeper", include_str!("../workflows/Realtime-Action-Beeper.json")),
];

pub fn get(stem: &str) -> Option<&'static str> {
    WORKFLOWS.iter().find(|(s, _)| *s == stem).map(|(_, t)| *t)
}
