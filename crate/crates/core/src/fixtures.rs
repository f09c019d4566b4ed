//! The loan-application model used throughout the documentation and tests.

use crate::mdp::{Distribution, Mdp, MdpBuilder, StateId, Strategy};

pub struct LoanExample {
    pub mdp: Mdp,
    /// Applies directly, quits 70% of the time after a rework request.
    pub impatient: Strategy,
    /// Same as `impatient` except at Rework: Quit 0.14, Submit 0.86.
    pub counterfactual: Strategy,
    pub rejected: StateId,
}

/// States (in index order): s0, Application, Error, Consultation,
/// Application+, Rework, Resubmit, Granted, Rejected.
/// Actions: Apply, Consult, Quit, Submit, Provider, Stay.
pub fn loan_application() -> LoanExample {
    let mut b = MdpBuilder::new();
    let s0 = b.state("s0");
    let application = b.state("Application");
    let error = b.state("Error");
    let consultation = b.state("Consultation");
    let application_plus = b.state("Application+");
    let rework = b.state("Rework");
    let resubmit = b.state("Resubmit");
    let granted = b.state("Granted");
    let rejected = b.state("Rejected");

    let apply = b.action("Apply");
    let consult = b.action("Consult");
    let quit = b.action("Quit");
    let submit = b.action("Submit");
    let provider = b.action("Provider");
    let stay = b.action("Stay");

    b.initial(s0)
        .transition(s0, apply, &[(application, 0.95), (error, 0.05)])
        .transition(s0, consult, &[(consultation, 1.0)])
        .transition(application, provider, &[(granted, 0.5), (rework, 0.5)])
        .transition(error, consult, &[(consultation, 1.0)])
        .transition(error, quit, &[(rejected, 1.0)])
        .transition(consultation, apply, &[(application_plus, 1.0)])
        .transition(consultation, quit, &[(rejected, 1.0)])
        .transition(application_plus, provider, &[(rework, 0.1), (granted, 0.9)])
        .transition(rework, submit, &[(resubmit, 1.0)])
        .transition(rework, quit, &[(rejected, 1.0)])
        .transition(resubmit, provider, &[(rejected, 0.2), (granted, 0.8)])
        .transition(granted, stay, &[(granted, 1.0)])
        .transition(rejected, stay, &[(rejected, 1.0)]);
    let mdp = b.build().expect("loan model is well-formed");

    let impatient = Strategy::new(
        &mdp,
        alloc::vec![
            alloc::vec![(apply, 1.0)],
            alloc::vec![(provider, 1.0)],
            alloc::vec![(consult, 0.2), (quit, 0.8)],
            alloc::vec![(quit, 1.0)],
            alloc::vec![(provider, 1.0)],
            alloc::vec![(quit, 0.7), (submit, 0.3)],
            alloc::vec![(provider, 1.0)],
            alloc::vec![(stay, 1.0)],
            alloc::vec![(stay, 1.0)],
        ],
    )
    .expect("impatient strategy is valid");
    let counterfactual = impatient.clone().with_row(
        rework,
        Distribution::new([(quit, 0.14), (submit, 0.86)]).expect("valid row"),
    );
    LoanExample { mdp, impatient, counterfactual, rejected }
}
