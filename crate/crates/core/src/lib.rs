pub mod convex;
pub mod dynamics;
pub mod trajectory;
pub mod reachability;
pub mod funnel;
pub mod world;
pub mod global_planner;
pub mod local_planner;
pub mod loop_search;
pub mod loop_closure;
pub mod orchestrator;
pub mod sim;
