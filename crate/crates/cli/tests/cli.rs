use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bpfree"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn flops_prints_forward_and_update_cost() {
    let out = bin().args(["flops", "--config"]).arg(configs().join("mnist/mf-2x1000.yaml")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0.003588"), "{text}");
    assert!(text.contains("0.010764"), "{text}");
}

#[test]
fn missing_config_fails_with_message() {
    let out = bin().args(["flops", "--config", "no/such/file.yaml"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn report_compares_two_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let header = "algo,dataset,arch,seed,test_acc,effective_epochs,wall_time_s,energy_wh,co2e_g,peak_mem_mib,f_fwd_gflops,f_bp_update_gflops\n";
    let base = dir.path().join("bp.csv");
    let alt = dir.path().join("mf.csv");
    std::fs::write(&base, format!("{header}bp,mnist,2x1000,mean,98.05,20,39.84,0.69,,926,0.0036,0.0108\n")).unwrap();
    std::fs::write(&alt, format!("{header}mf,mnist,2x1000,mean,98.14,20,35.03,0.60,,934,0.0036,0.0108\n")).unwrap();
    let csv = dir.path().join("delta.csv");
    let out = bin().arg("report").arg("--baseline").arg(&base).arg("--alt").arg(&alt).arg("--out").arg(&csv).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("-12.07"), "{text}");
    assert!(csv.exists());
}
