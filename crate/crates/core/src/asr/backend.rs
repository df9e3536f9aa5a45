//! Subprocess and HTTP recognizer backends.

use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{AsrError, Recognizer, UtteranceAudio};
use crate::audio::wav_bytes;

/// Runs a shell command per utterance; `{wav}` in the template is replaced
/// by the path of a temporary WAV file and stdout is the transcript.
#[derive(Debug, Clone)]
pub struct CommandRecognizer {
    pub template: String,
    pub timeout: Duration,
}

impl CommandRecognizer {
    pub fn new(template: impl Into<String>, timeout: Duration) -> Self {
        Self {
            template: template.into(),
            timeout,
        }
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

impl Recognizer for CommandRecognizer {
    fn recognize(&self, audio: &UtteranceAudio) -> Result<String, AsrError> {
        let mut file = tempfile::Builder::new().prefix("utt-").suffix(".wav").tempfile()?;
        std::io::Write::write_all(&mut file, &wav_bytes(&audio.samples, audio.sample_rate))?;
        let path = file.path().to_string_lossy().into_owned();
        let cmd = if self.template.contains("{wav}") {
            self.template.replace("{wav}", &shell_quote(&path))
        } else {
            format!("{} {}", self.template, shell_quote(&path))
        };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let err_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });
        let started = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(AsrError::Timeout(self.timeout.as_secs_f64()));
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let out = out_reader.join().expect("reader thread")?;
        let err = err_reader.join().expect("reader thread");
        if !status.success() {
            return Err(AsrError::Exit {
                status: status.to_string(),
                stderr: String::from_utf8_lossy(&err).trim().to_string(),
            });
        }
        String::from_utf8(out).map_err(|e| AsrError::Output(e.to_string()))
    }

    fn describe(&self) -> String {
        format!("cmd:{}", self.template)
    }
}

/// POSTs WAV bytes and expects `{"text": ...}` back.
#[derive(Debug, Clone)]
pub struct HttpRecognizer {
    pub url: String,
    pub timeout: Duration,
}

impl HttpRecognizer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self { url: url.into(), timeout }
    }
}

#[derive(Deserialize)]
struct HttpReply {
    text: String,
}

impl Recognizer for HttpRecognizer {
    fn recognize(&self, audio: &UtteranceAudio) -> Result<String, AsrError> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let body = wav_bytes(&audio.samples, audio.sample_rate);
        let reply = agent
            .post(&self.url)
            .set("Content-Type", "audio/wav")
            .send_bytes(&body)
            .map_err(|e| AsrError::Http(e.to_string()))?
            .into_string()?;
        let parsed: HttpReply = serde_json::from_str(&reply).map_err(|e| AsrError::Output(e.to_string()))?;
        Ok(parsed.text)
    }

    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }
}

#[cfg(test)]
mod tests {
    use super::super::UtteranceMeta;
    use super::*;
    use std::io::Write;
    use std::net::TcpListener;

    fn audio() -> UtteranceAudio {
        UtteranceAudio {
            meta: UtteranceMeta {
                speaker: 0,
                start_s: 0.0,
                end_s: 1.0,
            },
            samples: vec![0.25; 1600],
            sample_rate: 16000,
        }
    }

    #[test]
    fn command_receives_a_wav_path() {
        let r = CommandRecognizer::new("wc -c < {wav}", Duration::from_secs(10));
        let out = r.recognize(&audio()).unwrap();
        assert_eq!(out.trim(), (44 + 3200).to_string());
    }

    #[test]
    fn command_failure_is_an_error() {
        let r = CommandRecognizer::new("echo nope >&2; exit 3", Duration::from_secs(10));
        match r.recognize(&audio()) {
            Err(AsrError::Exit { stderr, .. }) => assert_eq!(stderr, "nope"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn command_timeout() {
        let r = CommandRecognizer::new("sleep 5 #", Duration::from_millis(100));
        let t = Instant::now();
        assert!(matches!(r.recognize(&audio()), Err(AsrError::Timeout(_))));
        assert!(t.elapsed() < Duration::from_secs(4));
    }

    #[test]
    fn http_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut got = Vec::new();
            // Read headers and the declared body.
            loop {
                let n = stream.read(&mut buf).unwrap();
                got.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&got).to_string();
                if let Some(h) = text.find("\r\n\r\n") {
                    let len: usize = text
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                        .unwrap();
                    if got.len() >= h + 4 + len {
                        break;
                    }
                }
            }
            let body = r#"{"text":"hello there"}"#;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            got.len()
        });
        let r = HttpRecognizer::new(format!("http://{addr}/asr"), Duration::from_secs(10));
        assert_eq!(r.recognize(&audio()).unwrap(), "hello there");
        assert!(server.join().unwrap() > 3244);
    }

    #[test]
    fn http_unreachable_is_an_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let r = HttpRecognizer::new(format!("http://{addr}/asr"), Duration::from_secs(2));
        assert!(matches!(r.recognize(&audio()), Err(AsrError::Http(_))));
    }
}
