//! Holds the `acceptance` test target. It lives in its own package so that
//! cargo runs it after every other test binary in the workspace.
