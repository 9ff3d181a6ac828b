use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax_rows, Graph, Real, Var};

use super::{cdan_loss, mcc_loss, CdanHead, CdanInputs, MccConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UdaMethod {
    Cdan,
    Mcc,
    CdanMcc,
}

impl UdaMethod {
    pub const ALL: [UdaMethod; 3] = [UdaMethod::Cdan, UdaMethod::Mcc, UdaMethod::CdanMcc];

    pub fn uses_cdan(self) -> bool {
        matches!(self, UdaMethod::Cdan | UdaMethod::CdanMcc)
    }

    pub fn uses_mcc(self) -> bool {
        matches!(self, UdaMethod::Mcc | UdaMethod::CdanMcc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UdaMethod::Cdan => "cdan",
            UdaMethod::Mcc => "mcc",
            UdaMethod::CdanMcc => "cdan_mcc",
        }
    }
}

/// Trade-off coefficients for the adversarial and confusion terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UdaWeights {
    pub cdan: f64,
    pub mcc: f64,
}

impl Default for UdaWeights {
    fn default() -> Self {
        Self { cdan: 1.0, mcc: 1.0 }
    }
}

/// Logged values of each objective term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub source_ce: f64,
    pub cdan: f64,
    pub mcc: f64,
    pub discriminator_accuracy: f64,
}

pub struct SourceBatch<'l> {
    pub features: Var,
    pub logits: Var,
    pub labels: &'l [usize],
}

pub struct TargetBatch {
    pub features: Var,
    pub logits: Var,
}

pub struct UdaTerms<'h, T: Real> {
    pub method: UdaMethod,
    pub weights: UdaWeights,
    pub cdan: Option<CdanHead<'h, T>>,
    pub lambda: T,
    pub entropy_conditioning: bool,
    pub mcc: MccConfig,
}

/// `CE(Z_s, y_s) + α·cdan + β·mcc`, with α and β masked by the method.
pub fn uda_objective<T: Real>(
    g: &mut Graph<'_, T>,
    source: SourceBatch<'_>,
    target: TargetBatch,
    terms: &UdaTerms<'_, T>,
) -> Result<(Var, LossBreakdown)> {
    let ce = g.cross_entropy(source.logits, source.labels);
    let mut out = LossBreakdown {
        source_ce: g.value(ce).item().to_f64().unwrap_or(f64::NAN),
        ..Default::default()
    };
    let mut total = ce;
    if terms.method.uses_cdan() {
        let head = terms
            .cdan
            .as_ref()
            .ok_or_else(|| Error::config("adversarial method selected without a discriminator"))?;
        let ps = softmax_rows(g.value(source.logits));
        let pt = softmax_rows(g.value(target.logits));
        let res = cdan_loss(
            g,
            head,
            CdanInputs {
                features_s: source.features,
                probs_s: &ps,
                features_t: target.features,
                probs_t: &pt,
            },
            terms.lambda,
            terms.entropy_conditioning,
        )?;
        out.cdan = g.value(res.loss).item().to_f64().unwrap_or(f64::NAN);
        out.discriminator_accuracy = res.discriminator_accuracy;
        let scaled = g.scale(res.loss, T::lit(terms.weights.cdan));
        total = g.add(total, scaled);
    }
    if terms.method.uses_mcc() {
        let m = mcc_loss(g, target.logits, &terms.mcc)?;
        out.mcc = g.value(m).item().to_f64().unwrap_or(f64::NAN);
        let scaled = g.scale(m, T::lit(terms.weights.mcc));
        total = g.add(total, scaled);
    }
    out.total = g.value(total).item().to_f64().unwrap_or(f64::NAN);
    Ok((total, out))
}
