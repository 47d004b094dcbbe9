use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use lrs_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { lrs_last_error(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

fn script(names: &str) -> Vec<u32> {
    lrs_core::mdp::Action::parse_script(names).unwrap().into_iter().map(|a| a.index() as u32).collect()
}

#[test]
fn ltl_round_trip() {
    let text = CString::new("F(p & X q)").unwrap();
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { lrs_ltl_parse(text.as_ptr(), &mut f) }, LrsStatus::Ok);
    let steps: Vec<CString> = ["", "p", "q r"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs: Vec<*const c_char> = steps.iter().map(|s| s.as_ptr()).collect();
    let mut out = false;
    assert_eq!(unsafe { lrs_ltl_eval(f, ptrs.as_ptr(), ptrs.len(), 0, &mut out) }, LrsStatus::Ok);
    assert!(out);
    assert_eq!(unsafe { lrs_ltl_eval(f, ptrs.as_ptr(), ptrs.len(), 2, &mut out) }, LrsStatus::Ok);
    assert!(!out);
    assert_eq!(unsafe { lrs_ltl_eval(f, ptrs.as_ptr(), ptrs.len(), 3, &mut out) }, LrsStatus::InvalidArgument);
    assert!(last_error().contains("out of bounds"));
    unsafe { lrs_ltl_free(f) };
}

#[test]
fn parse_errors_are_reported() {
    let text = CString::new("p U").unwrap();
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { lrs_ltl_parse(text.as_ptr(), &mut f) }, LrsStatus::ParseError);
    assert!(f.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { lrs_ltl_parse(ptr::null(), &mut f) }, LrsStatus::NullPointer);
}

#[test]
fn environment_steps_and_stops_at_terminal() {
    let id = CString::new("a2").unwrap();
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { lrs_env_open(id.as_ptr(), &mut env) }, LrsStatus::Ok);
    let mut s = LrsState::default();
    assert_eq!(unsafe { lrs_env_reset(env, 3, &mut s) }, LrsStatus::Ok);
    assert!(s.alive && !s.at_goal);
    let mut step = LrsStep::default();
    assert_eq!(unsafe { lrs_env_step(env, 3, &mut step) }, LrsStatus::Ok);
    assert!(step.next_state.on_ladder);
    assert_eq!(unsafe { lrs_env_step(env, 99, &mut step) }, LrsStatus::InvalidArgument);

    // walk the shortcut to the door; stepping afterwards is refused
    unsafe { lrs_env_reset(env, 3, &mut s) };
    for a in script("Down Down Down Left Left JumpLeft Left Left Left Right Up Up Up Up Up Up Up Left") {
        assert_eq!(unsafe { lrs_env_step(env, a, &mut step) }, LrsStatus::Ok);
    }
    assert!(step.done && step.next_state.at_goal);
    assert_eq!(step.reward, 1.0);
    assert_eq!(unsafe { lrs_env_step(env, 0, &mut step) }, LrsStatus::TerminalState);
    unsafe { lrs_env_free(env) };

    let bad = CString::new("no_such_room").unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { lrs_env_open(bad.as_ptr(), &mut none) }, LrsStatus::NotFound);
}

#[test]
fn instruction_matching_and_rewards() {
    let id = CString::new("a2").unwrap();
    let (mut env, mut instr) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(lrs_env_open(id.as_ptr(), &mut env), LrsStatus::Ok);
        assert_eq!(lrs_instruction_open(id.as_ptr(), &mut instr), LrsStatus::Ok);
    }
    let shortcut = script("Down Down Down Left Left JumpLeft Left Left Left Right Up Up Up Up Up Up Up Left");
    let mut level = 9;
    assert_eq!(unsafe { lrs_match_level(env, instr, shortcut.as_ptr(), shortcut.len(), &mut level) }, LrsStatus::Ok);
    assert_ne!(level, 0);

    let mut rewards = vec![0.0; shortcut.len()];
    let mut written = 0;
    let status = unsafe { lrs_episode_lang_rewards(env, instr, 1, shortcut.as_ptr(), shortcut.len(), rewards.as_mut_ptr(), rewards.len(), &mut written) };
    assert_eq!(status, LrsStatus::Ok);
    assert_eq!(written, shortcut.len());
    // the ladder descent is the only sentence the shortcut fully completes in order
    assert_eq!(rewards.iter().sum::<f64>(), 1.0);

    let status = unsafe { lrs_episode_lang_rewards(env, instr, 1, shortcut.as_ptr(), shortcut.len(), rewards.as_mut_ptr(), 2, &mut written) };
    assert_eq!(status, LrsStatus::BufferTooSmall);
    assert_eq!(written, shortcut.len());
    let status = unsafe { lrs_episode_lang_rewards(env, instr, 4, shortcut.as_ptr(), shortcut.len(), rewards.as_mut_ptr(), rewards.len(), &mut written) };
    assert_eq!(status, LrsStatus::InvalidArgument);
    unsafe {
        lrs_instruction_free(instr);
        lrs_env_free(env);
    }
}

#[test]
fn shaping_and_statistics() {
    let mut x = 0.0;
    assert_eq!(unsafe { lrs_potential(0.5, 0.99, 3, &mut x) }, LrsStatus::Ok);
    assert_eq!(x, 1.5);
    assert_eq!(unsafe { lrs_shaping_term(1.0, 2.0, 0.5, &mut x) }, LrsStatus::Ok);
    assert_eq!(x, 0.0);
    assert_eq!(unsafe { lrs_shaping_term(1.0, 2.0, 0.0, &mut x) }, LrsStatus::InvalidArgument);

    let wins = [0u8, 1, 1, 0];
    assert_eq!(unsafe { lrs_auc(wins.as_ptr(), wins.len(), 4, 2, &mut x) }, LrsStatus::Ok);
    assert!((x - 5.0 / 8.0).abs() < 1e-12);

    let counts = [0u64, 3, 5, 0];
    assert_eq!(unsafe { lrs_success_rate(counts.as_ptr(), counts.len(), &mut x) }, LrsStatus::Ok);
    assert_eq!(x, 0.5);

    let a = [0.1, 0.2, 0.3];
    let b = [0.7, 0.8, 0.9];
    assert_eq!(unsafe { lrs_significance(a.as_ptr(), 3, b.as_ptr(), 3, &mut x) }, LrsStatus::Ok);
    assert!((x - 0.05).abs() < 1e-12);
    assert_eq!(unsafe { lrs_significance(a.as_ptr(), 2, b.as_ptr(), 3, &mut x) }, LrsStatus::InvalidArgument);
}

#[test]
fn last_error_truncates_into_small_buffers() {
    let mut x = 0.0;
    unsafe { lrs_shaping_term(0.0, 0.0, 2.0, &mut x) };
    let mut buf = [0x7fu8; 4];
    let full = unsafe { lrs_last_error(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    assert!(full > 3);
    assert_eq!(buf[3], 0);
    unsafe { lrs_shaping_term(0.0, 0.0, 1.0, &mut x) };
    assert_eq!(unsafe { lrs_last_error(ptr::null_mut(), 0) }, 0);
}

#[test]
fn header_declares_every_export_and_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/lrs.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    for line in src.lines().filter(|l| l.starts_with("pub unsafe extern \"C\" fn ")) {
        let name = line["pub unsafe extern \"C\" fn ".len()..].split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(dir.join("examples/walk.c"))
        .status()
    else {
        eprintln!("no C compiler; skipping the compile check");
        return;
    };
    assert!(status.success());
}
