//! MQTT 3.1.1 control packets (the subset LIFY uses).

use bytes::{Buf, BufMut, Bytes, BytesMut};

use crate::error::MqttError;

/// Largest packet either side will accept.
pub const MAX_PACKET_SIZE: usize = 256 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QoS {
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

impl QoS {
    fn from_bits(bits: u8) -> Result<Self, MqttError> {
        match bits {
            0 => Ok(QoS::AtMostOnce),
            1 => Ok(QoS::AtLeastOnce),
            other => Err(MqttError::Protocol(format!("unsupported QoS {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub keep_alive_s: u16,
    pub clean_session: bool,
    pub username: Option<String>,
    pub password: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub topic: String,
    pub pkid: u16,
    pub qos: QoS,
    pub retain: bool,
    pub dup: bool,
    pub payload: Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect(Connect),
    ConnAck { session_present: bool, code: u8 },
    Publish(Publish),
    PubAck { pkid: u16 },
    Subscribe { pkid: u16, filters: Vec<(String, QoS)> },
    SubAck { pkid: u16, codes: Vec<u8> },
    PingReq,
    PingResp,
    Disconnect,
}

fn put_str(buf: &mut BytesMut, s: &str) {
    buf.put_u16(s.len() as u16);
    buf.put_slice(s.as_bytes());
}

fn put_remaining_length(buf: &mut BytesMut, mut len: usize) {
    loop {
        let mut byte = (len % 128) as u8;
        len /= 128;
        if len > 0 {
            byte |= 0x80;
        }
        buf.put_u8(byte);
        if len == 0 {
            break;
        }
    }
}

impl Packet {
    pub fn encode(&self, out: &mut BytesMut) {
        let mut body = BytesMut::new();
        let header: u8 = match self {
            Packet::Connect(c) => {
                put_str(&mut body, "MQTT");
                body.put_u8(4);
                let mut flags = 0u8;
                if c.clean_session {
                    flags |= 0x02;
                }
                if c.username.is_some() {
                    flags |= 0x80;
                }
                if c.password.is_some() {
                    flags |= 0x40;
                }
                body.put_u8(flags);
                body.put_u16(c.keep_alive_s);
                put_str(&mut body, &c.client_id);
                if let Some(u) = &c.username {
                    put_str(&mut body, u);
                }
                if let Some(p) = &c.password {
                    body.put_u16(p.len() as u16);
                    body.put_slice(p);
                }
                0x10
            }
            Packet::ConnAck { session_present, code } => {
                body.put_u8(u8::from(*session_present));
                body.put_u8(*code);
                0x20
            }
            Packet::Publish(p) => {
                put_str(&mut body, &p.topic);
                if p.qos != QoS::AtMostOnce {
                    body.put_u16(p.pkid);
                }
                body.put_slice(&p.payload);
                0x30 | (u8::from(p.dup) << 3) | ((p.qos as u8) << 1) | u8::from(p.retain)
            }
            Packet::PubAck { pkid } => {
                body.put_u16(*pkid);
                0x40
            }
            Packet::Subscribe { pkid, filters } => {
                body.put_u16(*pkid);
                for (f, q) in filters {
                    put_str(&mut body, f);
                    body.put_u8(*q as u8);
                }
                0x82
            }
            Packet::SubAck { pkid, codes } => {
                body.put_u16(*pkid);
                body.put_slice(codes);
                0x90
            }
            Packet::PingReq => 0xC0,
            Packet::PingResp => 0xD0,
            Packet::Disconnect => 0xE0,
        };
        out.put_u8(header);
        put_remaining_length(out, body.len());
        out.put_slice(&body);
    }

    pub fn to_bytes(&self) -> BytesMut {
        let mut out = BytesMut::new();
        self.encode(&mut out);
        out
    }

    /// Decodes one packet from the front of `buf`, consuming it. Returns
    /// `Ok(None)` when more bytes are needed.
    pub fn decode(buf: &mut BytesMut) -> Result<Option<Packet>, MqttError> {
        if buf.len() < 2 {
            return Ok(None);
        }
        let mut len = 0usize;
        let mut multiplier = 1usize;
        let mut header_len = 1;
        loop {
            if header_len >= buf.len() {
                return Ok(None);
            }
            let byte = buf[header_len];
            header_len += 1;
            len += usize::from(byte & 0x7F) * multiplier;
            if byte & 0x80 == 0 {
                break;
            }
            multiplier *= 128;
            if header_len > 4 {
                return Err(MqttError::Protocol("remaining length exceeds 4 bytes".into()));
            }
        }
        if len > MAX_PACKET_SIZE {
            return Err(MqttError::Protocol(format!("packet of {len} bytes exceeds limit")));
        }
        if buf.len() < header_len + len {
            return Ok(None);
        }
        let first = buf[0];
        buf.advance(header_len);
        let body = buf.split_to(len).freeze();
        parse_body(first, body).map(Some)
    }
}

struct Reader {
    body: Bytes,
}

impl Reader {
    fn need(&self, n: usize) -> Result<(), MqttError> {
        if self.body.remaining() < n {
            Err(MqttError::Protocol("truncated packet".into()))
        } else {
            Ok(())
        }
    }

    fn u8(&mut self) -> Result<u8, MqttError> {
        self.need(1)?;
        Ok(self.body.get_u8())
    }

    fn u16(&mut self) -> Result<u16, MqttError> {
        self.need(2)?;
        Ok(self.body.get_u16())
    }

    fn bytes(&mut self) -> Result<Bytes, MqttError> {
        let n = usize::from(self.u16()?);
        self.need(n)?;
        Ok(self.body.split_to(n))
    }

    fn string(&mut self) -> Result<String, MqttError> {
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec()).map_err(|_| MqttError::Protocol("string is not UTF-8".into()))
    }
}

fn parse_body(first: u8, body: Bytes) -> Result<Packet, MqttError> {
    let flags = first & 0x0F;
    let mut r = Reader { body };
    let packet = match first >> 4 {
        1 => {
            let proto = r.string()?;
            let level = r.u8()?;
            if proto != "MQTT" || level != 4 {
                return Err(MqttError::Protocol(format!("unsupported protocol {proto} level {level}")));
            }
            let cflags = r.u8()?;
            let keep_alive_s = r.u16()?;
            let client_id = r.string()?;
            if cflags & 0x04 != 0 {
                // will topic and message are accepted but not acted upon
                r.string()?;
                r.bytes()?;
            }
            let username = if cflags & 0x80 != 0 { Some(r.string()?) } else { None };
            let password = if cflags & 0x40 != 0 { Some(r.bytes()?.to_vec()) } else { None };
            Packet::Connect(Connect {
                client_id,
                keep_alive_s,
                clean_session: cflags & 0x02 != 0,
                username,
                password,
            })
        }
        2 => {
            let ack = r.u8()?;
            Packet::ConnAck { session_present: ack & 1 == 1, code: r.u8()? }
        }
        3 => {
            let qos = QoS::from_bits((flags >> 1) & 0x03)?;
            let topic = r.string()?;
            let pkid = if qos == QoS::AtMostOnce { 0 } else { r.u16()? };
            Packet::Publish(Publish {
                topic,
                pkid,
                qos,
                retain: flags & 1 == 1,
                dup: flags & 0x08 != 0,
                payload: r.body,
            })
        }
        4 => Packet::PubAck { pkid: r.u16()? },
        8 => {
            if flags != 0x02 {
                return Err(MqttError::Protocol("bad SUBSCRIBE flags".into()));
            }
            let pkid = r.u16()?;
            let mut filters = Vec::new();
            while r.body.has_remaining() {
                let f = r.string()?;
                // QoS 2 requests are granted at QoS 1.
                let q = QoS::from_bits(r.u8()?.min(1))?;
                filters.push((f, q));
            }
            if filters.is_empty() {
                return Err(MqttError::Protocol("SUBSCRIBE without filters".into()));
            }
            Packet::Subscribe { pkid, filters }
        }
        9 => {
            let pkid = r.u16()?;
            Packet::SubAck { pkid, codes: r.body.to_vec() }
        }
        12 => Packet::PingReq,
        13 => Packet::PingResp,
        14 => Packet::Disconnect,
        other => return Err(MqttError::Protocol(format!("unsupported packet type {other}"))),
    };
    Ok(packet)
}
