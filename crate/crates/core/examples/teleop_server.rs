//! Start the websocket service and drive it with a scripted console: turn
//! the pumps on, fly at the wall, and print telemetry until the cups hold.
//!
//! ```text
//! cargo run --example teleop_server
//! ```
//!
//! For an interactive session use `perchsim serve` and connect any
//! websocket client to `ws://127.0.0.1:8765`.

use std::time::{Duration, Instant};

use tungstenite::{connect, Message};

use perchdrill::model::ParamSet;
use perchdrill::teleop::{serve, TeleopConfig};
use perchdrill::telemetry::OutboundMessage;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TeleopConfig {
        port: 0,
        rate: 4.0,
        ..TeleopConfig::default()
    };
    let server = serve(&ParamSet::default(), cfg)?;
    let (mut ws, _) = connect(format!("ws://{}", server.local_addr()))?;
    ws.send(Message::text("pumps on"))?;
    ws.send(Message::text(r#"{"cmd":"set_flight_ref","velocity":[0.2,0.0,0.0],"heading":3.141592653589793}"#))?;
    ws.send(Message::text("tool on"))?;

    let deadline = Instant::now() + Duration::from_secs(10);
    let mut contact = false;
    while Instant::now() < deadline {
        let Message::Text(text) = ws.read()? else { continue };
        match serde_json::from_str::<OutboundMessage>(text.as_str())? {
            OutboundMessage::Telemetry(t) if ((t.time * 50.0).round() as u64).is_multiple_of(25) => {
                println!("t={:5.2} s  x={:.3} m  cups {:?} Pa", t.time, t.position[0], t.cup_pressure)
            }
            OutboundMessage::Rejected { command, reason, .. } => println!("rejected `{command}`: {reason}"),
            OutboundMessage::Event(e) if e.kind.to_string() == "contact" && !contact => {
                contact = true;
                println!("contact at {:.2} s; perching", e.time);
                ws.send(Message::text("flight_ref 0.05 0 0 180"))?;
                ws.send(Message::text("mode perching"))?;
            }
            OutboundMessage::Event(e) if e.kind.to_string() == "attached" => {
                println!("attached at {:.2} s {}", e.time, e.detail);
                break;
            }
            _ => {}
        }
    }
    ws.close(None)?;
    server.shutdown();
    Ok(())
}
