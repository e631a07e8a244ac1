//! Synthetic records through the CSV format, band-pass filtering and
//! windowing into training samples.
//!
//! cargo run --release --example synth_and_preprocess

use ecgcl::data::{build_samples, load_csv, preprocess, save_csv, synth_ecg, Morphology, Preprocess, Rhythm, SynthConfig};
use ecgcl::network::TaskShape;

fn main() -> ecgcl::Result<()> {
    let cfg = SynthConfig {
        fs: 250.0,
        duration_s: 20.0,
        leads: 2,
        rhythms: vec![Rhythm::Regular, Rhythm::AfLike],
        morphologies: vec![Morphology::WideQrs],
        snr_db: Some(15.0),
        records: 6,
        patients: 3,
        seed: 11,
        ..SynthConfig::default()
    };
    let records = synth_ecg(&cfg)?;
    let dir = std::env::temp_dir().join("ecgcl-synth-example");
    let files = save_csv(&records, &dir)?;
    let back = load_csv(&dir)?;
    println!("{} records written to {} and read back", files.len(), dir.display());
    assert_eq!(back.len(), records.len());
    for r in &back {
        println!(
            "  {}: {} leads, {} samples, {} R-peaks, labels {:?}",
            r.patient_id,
            r.leads(),
            r.samples(),
            r.qrs.as_ref().map_or(0, Vec::len),
            r.labels.as_deref().unwrap_or(&[])
        );
    }

    let prep = Preprocess::default();
    let windows = preprocess(&back, &prep)?;
    println!("{} windows of {} s", windows.len(), prep.window_seconds);
    let shape = TaskShape::seg(2, windows[0].len());
    let samples = build_samples(&windows, &shape, &[])?;
    let s = &samples[0];
    let positives = s.target.data().iter().filter(|&&v| v > 0.5).count();
    println!(
        "first sample: signal {:?}, target {:?} with {positives} positive positions",
        s.signal.shape(),
        s.target.shape()
    );
    Ok(())
}
