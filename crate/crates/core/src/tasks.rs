//! Synthetic verifiable tasks.
//!
//! A question is a K-way multiple choice item with one correct answer. The
//! verifier is exact and binary. Difficulty never reaches the verifier; it only
//! shapes the initial policy (see [`crate::policy::PolicyParams::init`]).

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: usize,
    pub answer_space: usize,
    pub truth: usize,
    pub difficulty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPool {
    pub questions: Vec<Question>,
    pub seed: u64,
}

/// Decoded form of a hint token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedHint {
    pub suggested: usize,
    pub strength: usize,
}

pub fn generate_pool(n: usize, k: usize, seed: u64) -> Result<TaskPool> {
    if n == 0 {
        return Err(Error::config("pool.n", "must be at least 1"));
    }
    if k < 2 {
        return Err(Error::config("pool.k", "answer space must have at least 2 answers"));
    }
    let mut rng = rng::stream(seed, rng::purpose::POOL, n as u64, k as u64);
    let questions = (0..n)
        .map(|id| Question {
            id,
            answer_space: k,
            truth: rng.gen_range(0..k),
            difficulty: rng.gen::<f64>(),
        })
        .collect();
    Ok(TaskPool { questions, seed })
}

/// Binary verifier. Panics on an answer outside the question's answer space.
pub fn verify(q: &Question, answer: usize) -> u8 {
    assert!(
        answer < q.answer_space,
        "answer {answer} outside answer space {} of question {}",
        q.answer_space,
        q.id
    );
    u8::from(answer == q.truth)
}

pub fn decode_hint(q: &Question, hint: &[usize], strength_vocab: usize) -> Result<DecodedHint> {
    decode_tokens(hint, q.answer_space, strength_vocab)
}

/// Token 0 names the suggested answer, token 1 (when present) a strength
/// level. Later tokens are free filler but must stay inside the strength
/// vocabulary.
pub fn decode_tokens(hint: &[usize], answer_space: usize, strength_vocab: usize) -> Result<DecodedHint> {
    assert!(!hint.is_empty(), "hint must carry at least one token");
    if hint[0] >= answer_space {
        return Err(Error::MalformedHint {
            position: 0,
            token: hint[0],
            vocab: answer_space,
        });
    }
    for (position, &token) in hint.iter().enumerate().skip(1) {
        if token >= strength_vocab {
            return Err(Error::MalformedHint {
                position,
                token,
                vocab: strength_vocab,
            });
        }
    }
    Ok(DecodedHint {
        suggested: hint[0],
        strength: hint.get(1).copied().unwrap_or(0),
    })
}

impl TaskPool {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Answer-space size shared by every question in the pool.
    pub fn answer_space(&self) -> usize {
        self.questions.first().map_or(0, |q| q.answer_space)
    }

    pub fn get(&self, id: usize) -> &Question {
        &self.questions[id]
    }

    /// One `id truth answer_space difficulty` record per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for q in &self.questions {
            writeln!(out, "{} {} {} {}", q.id, q.truth, q.answer_space, q.difficulty).unwrap();
        }
        out
    }

    pub fn from_text(text: &str, seed: u64) -> Result<TaskPool> {
        let mut questions = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::parse(lineno + 1, "expected `id truth answer_space difficulty`"));
            }
            let int = |s: &str, what: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::parse(lineno + 1, format!("{what}: {e}")))
            };
            let id = int(fields[0], "id")?;
            let truth = int(fields[1], "truth")?;
            let answer_space = int(fields[2], "answer_space")?;
            let difficulty: f64 = fields[3]
                .parse()
                .map_err(|e| Error::parse(lineno + 1, format!("difficulty: {e}")))?;
            if id != questions.len() {
                return Err(Error::parse(lineno + 1, format!("expected id {}", questions.len())));
            }
            if answer_space < 2 || truth >= answer_space {
                return Err(Error::parse(lineno + 1, "truth must lie in [0, answer_space)"));
            }
            if !(0.0..=1.0).contains(&difficulty) {
                return Err(Error::parse(lineno + 1, "difficulty must lie in [0, 1]"));
            }
            questions.push(Question {
                id,
                answer_space,
                truth,
                difficulty,
            });
        }
        Ok(TaskPool { questions, seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(truth: usize, k: usize) -> Question {
        Question {
            id: 0,
            answer_space: k,
            truth,
            difficulty: 0.5,
        }
    }

    #[test]
    fn single_question_pool() {
        let pool = generate_pool(1, 2, 7).unwrap();
        assert_eq!(pool.len(), 1);
        assert!(pool.questions[0].truth < 2);
    }

    #[test]
    fn same_seed_same_pool() {
        assert_eq!(generate_pool(64, 8, 3).unwrap(), generate_pool(64, 8, 3).unwrap());
    }

    #[test]
    fn different_seed_changes_some_truth() {
        let a = generate_pool(64, 8, 3).unwrap();
        let b = generate_pool(64, 8, 4).unwrap();
        let differing = a
            .questions
            .iter()
            .zip(&b.questions)
            .filter(|(x, y)| x.truth != y.truth)
            .count();
        assert!(differing >= 1);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(generate_pool(0, 4, 1), Err(Error::Config { .. })));
        assert!(matches!(generate_pool(4, 1, 1), Err(Error::Config { .. })));
    }

    #[test]
    fn verify_identity() {
        assert_eq!(verify(&q(3, 8), 3), 1);
        assert_eq!(verify(&q(3, 8), 2), 0);
    }

    #[test]
    fn exactly_one_correct_answer() {
        let question = q(1, 4);
        let total: u32 = (0..4).map(|a| u32::from(verify(&question, a))).sum();
        assert_eq!(total, 1);
    }

    #[test]
    #[should_panic(expected = "outside answer space")]
    fn verify_out_of_range_panics() {
        verify(&q(0, 4), 4);
    }

    #[test]
    fn decode_reads_tokens() {
        let d = decode_hint(&q(0, 8), &[5, 1], 3).unwrap();
        assert_eq!((d.suggested, d.strength), (5, 1));
        let d = decode_hint(&q(0, 8), &[0], 3).unwrap();
        assert_eq!((d.suggested, d.strength), (0, 0));
    }

    #[test]
    fn decode_rejects_out_of_vocab() {
        assert!(matches!(
            decode_hint(&q(0, 4), &[7, 0], 3),
            Err(Error::MalformedHint { position: 0, .. })
        ));
        assert!(matches!(
            decode_hint(&q(0, 4), &[1, 3], 3),
            Err(Error::MalformedHint { position: 1, .. })
        ));
    }

    #[test]
    fn text_rejects_garbage() {
        assert!(TaskPool::from_text("0 9 4 0.5\n", 0).is_err());
        assert!(TaskPool::from_text("1 0 4 0.5\n", 0).is_err());
        assert!(TaskPool::from_text("0 0 4\n", 0).is_err());
    }

    proptest! {
        #[test]
        fn pool_invariants(n in 1usize..200, k in 2usize..16, seed in any::<u64>()) {
            let pool = generate_pool(n, k, seed).unwrap();
            prop_assert_eq!(pool.len(), n);
            for (i, q) in pool.questions.iter().enumerate() {
                prop_assert_eq!(q.id, i);
                prop_assert!(q.truth < k);
                prop_assert!((0.0..=1.0).contains(&q.difficulty));
                let total: u32 = (0..k).map(|a| u32::from(verify(q, a))).sum();
                prop_assert_eq!(total, 1);
            }
            let back = TaskPool::from_text(&pool.to_text(), seed).unwrap();
            prop_assert_eq!(back, pool);
        }
    }
}
