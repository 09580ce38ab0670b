mod common;

use common::prompts::{check_goldens, render_all, AUDIENCE};
use strata_core::prompt::TaskRegistry;

#[test]
fn every_task_matches_its_golden() {
    let n = check_goldens().unwrap_or_else(|e| panic!("{e}\nrerun with UPDATE_GOLDENS=1 after reviewing"));
    assert_eq!(n, TaskRegistry::builtin().len());
}

#[test]
fn fixture_covers_every_task_once() {
    let mut tasks: Vec<String> = render_all(true).into_iter().map(|(t, _)| t).collect();
    tasks.sort();
    let mut builtin: Vec<String> = TaskRegistry::builtin().iter().map(|t| t.id.to_string()).collect();
    builtin.sort();
    assert_eq!(tasks, builtin);
}

#[test]
fn audience_appears_verbatim_only_when_set() {
    for (task, text) in render_all(true) {
        assert!(text.contains(&format!("Audience: {AUDIENCE}")), "{task}");
    }
    for (task, text) in render_all(false) {
        assert!(!text.contains(AUDIENCE), "{task}");
    }
}

#[test]
fn rendering_is_deterministic() {
    assert_eq!(render_all(true), render_all(true));
}
