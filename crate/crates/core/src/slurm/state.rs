//! Job states as reported by accounting, and the transitions between them.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Pending,
    Running,
    Completed,
    Failed,
    Cancelled,
    Timeout,
}

impl JobState {
    pub const ALL: [JobState; 6] = [
        JobState::Pending,
        JobState::Running,
        JobState::Completed,
        JobState::Failed,
        JobState::Cancelled,
        JobState::Timeout,
    ];

    pub fn is_terminal(self) -> bool {
        !matches!(self, JobState::Pending | JobState::Running)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Pending => "PENDING",
            JobState::Running => "RUNNING",
            JobState::Completed => "COMPLETED",
            JobState::Failed => "FAILED",
            JobState::Cancelled => "CANCELLED",
            JobState::Timeout => "TIMEOUT",
        }
    }

    /// Maps an accounting state token. Returns `None` for tokens with no mapping.
    ///
    /// `CANCELLED by <uid>` is accepted, and node failures and out-of-memory
    /// kills count as failures.
    pub fn from_token(token: &str) -> Option<JobState> {
        let token = token.trim();
        let head = token.split_whitespace().next().unwrap_or("");
        let head = head.trim_end_matches('+');
        Some(match head {
            "PENDING" | "REQUEUED" | "RESV_DEL_HOLD" | "REQUEUE_HOLD" | "REQUEUE_FED" => JobState::Pending,
            "RUNNING" | "COMPLETING" | "CONFIGURING" | "SUSPENDED" | "STAGE_OUT" | "SIGNALING" | "RESIZING" => {
                JobState::Running
            }
            "COMPLETED" => JobState::Completed,
            "FAILED" | "NODE_FAIL" | "OUT_OF_MEMORY" | "BOOT_FAIL" | "DEADLINE" | "PREEMPTED" => JobState::Failed,
            "CANCELLED" | "REVOKED" => JobState::Cancelled,
            "TIMEOUT" => JobState::Timeout,
            _ => return None,
        })
    }

    /// The direct transition relation.
    pub fn can_transition(self, to: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, to),
            (Pending, Running) | (Pending, Cancelled) | (Running, Completed | Failed | Cancelled | Timeout)
        )
    }

    /// Reflexive-transitive closure of [`JobState::can_transition`].
    ///
    /// Polling can miss intermediate states, so two consecutive observations
    /// are consistent when the second is reachable from the first.
    pub fn reachable(self, to: JobState) -> bool {
        self == to || self.can_transition(to) || (self == JobState::Pending && JobState::Running.can_transition(to))
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// State of an array parent derived from its tasks.
///
/// Any failed task fails the parent; the parent completes only when every
/// task completed. While tasks are outstanding the parent is pending if no
/// task has left the queue, and running otherwise. When all tasks are
/// terminal without failures, a timeout outranks a cancellation.
pub fn aggregate_array(tasks: &[JobState]) -> JobState {
    if tasks.is_empty() {
        return JobState::Pending;
    }
    if tasks.contains(&JobState::Failed) {
        return JobState::Failed;
    }
    if tasks.iter().all(|s| *s == JobState::Completed) {
        return JobState::Completed;
    }
    if tasks.iter().any(|s| !s.is_terminal()) {
        return if tasks.iter().all(|s| *s == JobState::Pending) {
            JobState::Pending
        } else {
            JobState::Running
        };
    }
    if tasks.contains(&JobState::Timeout) {
        JobState::Timeout
    } else {
        JobState::Cancelled
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens() {
        assert_eq!(JobState::from_token("COMPLETED"), Some(JobState::Completed));
        assert_eq!(JobState::from_token("CANCELLED by 1000"), Some(JobState::Cancelled));
        assert_eq!(JobState::from_token("NODE_FAIL"), Some(JobState::Failed));
        assert_eq!(JobState::from_token("OUT_OF_MEMORY"), Some(JobState::Failed));
        assert_eq!(JobState::from_token("BOGUS"), None);
        for s in JobState::ALL {
            assert_eq!(JobState::from_token(s.as_str()), Some(s));
        }
    }

    #[test]
    fn terminal_states_absorb() {
        for from in JobState::ALL.into_iter().filter(|s| s.is_terminal()) {
            for to in JobState::ALL {
                assert!(!from.can_transition(to));
                assert_eq!(from.reachable(to), from == to);
            }
        }
    }

    #[test]
    fn example_aggregation() {
        use JobState::*;
        assert_eq!(aggregate_array(&[Completed, Failed, Completed]), Failed);
        assert_eq!(aggregate_array(&[Completed, Completed]), Completed);
        assert_eq!(aggregate_array(&[Pending, Completed]), Running);
        assert_eq!(aggregate_array(&[Pending, Pending]), Pending);
    }
}
