//! Request construction, mutation, dispatch and the value store fed by
//! successful responses.

mod databank;
mod mutate;
mod request;
mod transport;

pub use databank::{
    decompose_response, decompose_value, path_matches, DataBank, OperationStore, StoredField,
    DEFAULT_FIELD_CAP,
};
pub use mutate::{
    default_mutations, undeclared_methods, wrong_typed, DropRequired, InvalidContentType,
    MethodSwap, MutationFactory, MutationKind, MutationOperator, Mutator, Overlong, WrongType,
    DEFAULT_MUTATION_RATE, INVALID_CONTENT_TYPE, OVERLONG_FALLBACK_LEN,
};
pub use request::{
    build_request, value_text, Binding, DependencyUse, HttpRequest, RequestError, RequestPlan,
};
pub use transport::{
    default_transports, dispatch, open_transport, HttpResponse, HttpTransport, ResponseRecord,
    Transport, TransportConfig, TransportError, TransportErrorKind, TransportFactory,
    TransportRegistry, TransportSetupError, DEFAULT_TIMEOUT,
};
