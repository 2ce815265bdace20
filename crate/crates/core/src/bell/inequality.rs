//! CHSH and Bell-1964 inequality evaluators.

use serde::{Deserialize, Serialize};

use super::{BellError, CorrelationEstimate, DetectorSetting, Estimator, ModelTag};

/// Classical bound on |S|.
pub const CHSH_BOUND: f64 = 2.0;

/// A difference counts as a violation only beyond this many combined stderrs.
const VIOLATION_SIGMAS: f64 = 3.0;

fn combined(terms: &[CorrelationEstimate]) -> f64 {
    terms.iter().map(|t| t.stderr * t.stderr).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    #[serde(rename = "S")]
    pub s: f64,
    pub stderr: f64,
    pub bound: f64,
    pub violated: bool,
    /// C(a,b), C(a,b′), C(a′,b), C(a′,b′).
    pub terms: [CorrelationEstimate; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bell64Result {
    pub lhs: f64,
    pub rhs: f64,
    pub stderr: f64,
    pub violated: bool,
    /// C(a,b), C(a,b′), C(b,b′).
    pub terms: [CorrelationEstimate; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub model: ModelTag,
    /// Settings in evaluation order: (a, a′, b, b′) for CHSH, (a, b, b′)
    /// for Bell-1964.
    pub settings: Vec<DetectorSetting>,
    pub chsh: Option<ChshResult>,
    pub bell64: Option<Bell64Result>,
}

/// S = C(a,b) − C(a,b′) + C(a′,b) + C(a′,b′).
///
/// Flagged as violated when |S| > 2 + 3σ, σ the combined stderr of the four
/// terms. Each term uses its own random-stream family.
pub fn chsh(
    est: &Estimator,
    a: &DetectorSetting,
    a_prime: &DetectorSetting,
    b: &DetectorSetting,
    b_prime: &DetectorSetting,
) -> Result<InequalityReport, BellError> {
    let terms = [
        est.correlate(a, b, 0)?,
        est.correlate(a, b_prime, 1)?,
        est.correlate(a_prime, b, 2)?,
        est.correlate(a_prime, b_prime, 3)?,
    ];
    let s = terms[0].value - terms[1].value + terms[2].value + terms[3].value;
    let stderr = combined(&terms);
    Ok(InequalityReport {
        model: est.model,
        settings: vec![*a, *a_prime, *b, *b_prime],
        chsh: Some(ChshResult {
            s,
            stderr,
            bound: CHSH_BOUND,
            violated: s.abs() > CHSH_BOUND + VIOLATION_SIGMAS * stderr,
            terms,
        }),
        bell64: None,
    })
}

/// |C(a,b) − C(a,b′)| ≤ 1 + C(b,b′) for anticorrelating models. For models
/// with C(s,s) = +1 the bound reads 1 − C(b,b′).
pub fn bell64(
    est: &Estimator,
    a: &DetectorSetting,
    b: &DetectorSetting,
    b_prime: &DetectorSetting,
) -> Result<InequalityReport, BellError> {
    let terms = [est.correlate(a, b, 4)?, est.correlate(a, b_prime, 5)?, est.correlate(b, b_prime, 6)?];
    let lhs = (terms[0].value - terms[1].value).abs();
    let rhs = 1.0 - est.same_setting_sign() * terms[2].value;
    let stderr = combined(&terms);
    Ok(InequalityReport {
        model: est.model,
        settings: vec![*a, *b, *b_prime],
        chsh: None,
        bell64: Some(Bell64Result { lhs, rhs, stderr, violated: lhs > rhs + VIOLATION_SIGMAS * stderr, terms }),
    })
}
