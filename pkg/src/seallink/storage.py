"""Persistence: user credential DB, signed-call files and call metadata.

Users live in an XML document (root `Users`); calls metadata in a
second XML document (root `Calls`) next to the dump and manifest files
in one data directory.  All mutation goes through a single Storage
object whose methods serialize on an internal lock, so concurrent
transport sessions can store calls safely.

PIN authentication implements the lockout policy: three consecutive
wrong PINs lock the subscriber for 30 minutes, six failures within one
calendar day lock for 24 hours.  Time is always passed in, never read
from the wall clock, so the policy is testable without sleeping.
"""
from __future__ import annotations

import hashlib
import hmac
import os
import random
import secrets
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .chain import ChainManifest, parse_manifest, render_manifest
from .errors import IoFailure, SeallinkError
from .pcap import CapturedPacket, parse_capture_file, write_capture_file

SHORT_LOCK_SECONDS = 30 * 60
DAY_LOCK_SECONDS = 24 * 60 * 60
MAX_CONSECUTIVE_FAILURES = 3
MAX_DAILY_FAILURES = 6

TRACKING_ID_HEX_LEN = 16


class MalformedXml(SeallinkError):
    """Document is not well-formed or violates the expected schema."""


class DuplicateSubscriber(SeallinkError):
    """Two user records share a SubscriberID."""


class UnknownSubscriber(SeallinkError):
    """SubscriberID not present in the user DB."""


class ServiceDisabled(SeallinkError):
    """Subscriber exists but the signed-call service is not enabled."""


class UnknownTrackingId(SeallinkError):
    """No call record with that tracking id."""


class NotStored(SeallinkError):
    """Call record exists but is pending confirmation or deleted."""


class UnregisteredParty(SeallinkError):
    """Caller or callee missing from the user DB or disabled."""


@dataclass
class UserRecord:
    subscriber_id: str
    unique_service_id: str = ""
    pin: str | None = None
    pin_hash: str | None = None
    service_enabled: bool = True
    reg_date: str = ""
    full_name: str = ""
    address: str = ""
    city: str = ""
    commercial_entity: bool = False


def make_pin_hash(pin: str, rng: random.Random | None = None) -> str:
    """Salted SHA-256 of a PIN, as `salthex$digesthex`."""
    salt = rng.randbytes(8) if rng is not None else secrets.token_bytes(8)
    digest = hashlib.sha256(salt + pin.encode("utf-8")).hexdigest()
    return f"{salt.hex()}${digest}"


def _pin_matches(user: UserRecord, pin: str) -> bool:
    if user.pin is not None:
        return hmac.compare_digest(user.pin, pin)
    if user.pin_hash is not None:
        salt_hex, sep, digest_hex = user.pin_hash.partition("$")
        if not sep:
            return False
        try:
            salt = bytes.fromhex(salt_hex)
        except ValueError:
            return False
        actual = hashlib.sha256(salt + pin.encode("utf-8")).hexdigest()
        return hmac.compare_digest(actual, digest_hex)
    return False


def _parse_bool(text: str, context: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true"):
        return True
    if value in ("0", "false"):
        return False
    raise MalformedXml(f"{context}: expected boolean, got {text!r}")


def _child_text(element: ET.Element, name: str) -> str | None:
    child = element.find(name)
    if child is None:
        return None
    return child.text or ""


def load_user_db(xml: bytes | str) -> list[UserRecord]:
    """Parse a user credentials document into records."""
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise MalformedXml(f"user DB: {exc}") from None
    if root.tag != "Users":
        raise MalformedXml(f"user DB root must be Users, got {root.tag}")
    users: list[UserRecord] = []
    seen: set[str] = set()
    for element in root.findall("User"):
        subscriber_id = (_child_text(element, "SubscriberID") or "").strip()
        if not subscriber_id:
            raise MalformedXml("User without a SubscriberID")
        if subscriber_id in seen:
            raise DuplicateSubscriber(subscriber_id)
        seen.add(subscriber_id)
        pin = _child_text(element, "PIN")
        pin_hash = _child_text(element, "PINHash")
        if pin is None and pin_hash is None:
            raise MalformedXml(f"{subscriber_id}: neither PIN nor PINHash present")
        users.append(
            UserRecord(
                subscriber_id=subscriber_id,
                unique_service_id=_child_text(element, "UniqueServiceID") or "",
                pin=pin,
                pin_hash=pin_hash,
                service_enabled=_parse_bool(
                    _child_text(element, "ServiceEnabled") or "1", subscriber_id
                ),
                reg_date=_child_text(element, "RegDate") or "",
                full_name=_child_text(element, "FullName") or "",
                address=_child_text(element, "Address") or "",
                city=_child_text(element, "City") or "",
                commercial_entity=_parse_bool(
                    _child_text(element, "CommercialEntity") or "0", subscriber_id
                ),
            )
        )
    return users


def save_user_db(users: list[UserRecord]) -> bytes:
    root = ET.Element("Users")
    for user in users:
        element = ET.SubElement(root, "User")
        ET.SubElement(element, "SubscriberID").text = user.subscriber_id
        ET.SubElement(element, "UniqueServiceID").text = user.unique_service_id
        if user.pin is not None:
            ET.SubElement(element, "PIN").text = user.pin
        if user.pin_hash is not None:
            ET.SubElement(element, "PINHash").text = user.pin_hash
        ET.SubElement(element, "ServiceEnabled").text = "1" if user.service_enabled else "0"
        ET.SubElement(element, "RegDate").text = user.reg_date
        ET.SubElement(element, "FullName").text = user.full_name
        ET.SubElement(element, "Address").text = user.address
        ET.SubElement(element, "City").text = user.city
        ET.SubElement(element, "CommercialEntity").text = (
            "1" if user.commercial_entity else "0"
        )
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


class AuthStatus(Enum):
    OK = "Ok"
    FAIL = "Fail"
    LOCKED = "Locked"


@dataclass(frozen=True, slots=True)
class AuthResult:
    status: AuthStatus
    remaining_attempts: int | None = None
    locked_until: float | None = None


@dataclass
class LockoutState:
    subscriber_id: str
    consecutive_failures: int = 0
    window_failures_today: int = 0
    window_day: str = ""
    locked_until: float | None = None


class CallStatus(str, Enum):
    PENDING = "PendingConfirmation"
    STORED = "Stored"


@dataclass
class CallRecord:
    tracking_id: str
    caller: str
    callee: str
    start_time: str
    duration_ms: int
    dump_path: str = ""
    manifest_path: str = ""
    modulus: int | None = None
    exponent: int | None = None
    status: CallStatus = CallStatus.PENDING


def _utc_day(now: float) -> str:
    return datetime.fromtimestamp(now, tz=timezone.utc).strftime("%Y-%m-%d")


def iso_utc(now: float) -> str:
    return datetime.fromtimestamp(now, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class Storage:
    """One data directory's worth of users, calls, dumps and manifests."""

    CALLS_FILE = "calls.xml"

    def __init__(
        self,
        data_dir: str | Path,
        users: list[UserRecord] | None = None,
        rng: random.Random | None = None,
    ) -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._rng = rng
        self._lock = threading.RLock()
        self._users: dict[str, UserRecord] = {}
        for user in users or []:
            if user.subscriber_id in self._users:
                raise DuplicateSubscriber(user.subscriber_id)
            self._users[user.subscriber_id] = user
        self._lockouts: dict[str, LockoutState] = {}
        self._calls: list[CallRecord] = []
        calls_path = self.data_dir / self.CALLS_FILE
        if calls_path.exists():
            self._calls = _load_calls(calls_path.read_bytes())

    # -- users and authentication -------------------------------------

    def get_user(self, subscriber_id: str) -> UserRecord | None:
        with self._lock:
            return self._users.get(subscriber_id)

    def is_registered(self, subscriber_id: str) -> bool:
        user = self.get_user(subscriber_id)
        return user is not None and user.service_enabled

    def authenticate(self, subscriber_id: str, pin: str, now: float) -> AuthResult:
        with self._lock:
            user = self._users.get(subscriber_id)
            if user is None:
                raise UnknownSubscriber(subscriber_id)
            if not user.service_enabled:
                raise ServiceDisabled(subscriber_id)
            state = self._lockouts.setdefault(subscriber_id, LockoutState(subscriber_id))
            day = _utc_day(now)
            if state.window_day != day:
                state.window_day = day
                state.window_failures_today = 0
            if state.locked_until is not None:
                if now < state.locked_until:
                    return AuthResult(AuthStatus.LOCKED, locked_until=state.locked_until)
                state.locked_until = None
            if _pin_matches(user, pin):
                state.consecutive_failures = 0
                return AuthResult(AuthStatus.OK)
            state.consecutive_failures += 1
            state.window_failures_today += 1
            if state.window_failures_today >= MAX_DAILY_FAILURES:
                state.locked_until = now + DAY_LOCK_SECONDS
                return AuthResult(AuthStatus.LOCKED, locked_until=state.locked_until)
            if state.consecutive_failures % MAX_CONSECUTIVE_FAILURES == 0:
                state.locked_until = now + SHORT_LOCK_SECONDS
                return AuthResult(AuthStatus.LOCKED, locked_until=state.locked_until)
            remaining = MAX_CONSECUTIVE_FAILURES - (
                state.consecutive_failures % MAX_CONSECUTIVE_FAILURES
            )
            return AuthResult(AuthStatus.FAIL, remaining_attempts=remaining)

    def lockout_state(self, subscriber_id: str) -> LockoutState | None:
        with self._lock:
            return self._lockouts.get(subscriber_id)

    # -- call persistence ----------------------------------------------

    def _new_tracking_id(self) -> str:
        existing = {record.tracking_id for record in self._calls}
        for _ in range(1000):
            if self._rng is not None:
                tid = self._rng.randbytes(TRACKING_ID_HEX_LEN // 2).hex()
            else:
                tid = secrets.token_hex(TRACKING_ID_HEX_LEN // 2)
            if tid not in existing:
                return tid
        raise IoFailure("could not allocate a fresh tracking id")

    def store_call(
        self,
        packets: list[CapturedPacket] | tuple[CapturedPacket, ...],
        manifest: ChainManifest | str,
        caller: str,
        callee: str,
        start_time: str | float,
        duration_ms: int | None = None,
    ) -> str:
        """Persist dump + manifest + metadata; all-or-nothing.

        The record starts as PendingConfirmation; confirm_call moves it
        to Stored once the caller signs off.
        """
        manifest_obj = manifest if isinstance(manifest, ChainManifest) else parse_manifest(manifest)
        manifest_text = render_manifest(manifest_obj)
        with self._lock:
            for party in (caller, callee):
                user = self._users.get(party)
                if user is None or not user.service_enabled:
                    raise UnregisteredParty(party)
            if isinstance(start_time, (int, float)):
                start_time = iso_utc(float(start_time))
            if duration_ms is None:
                if len(packets) >= 2:
                    duration_ms = (
                        packets[-1].timestamp_us - packets[0].timestamp_us
                    ) // 1000
                else:
                    duration_ms = 0
            tracking_id = self._new_tracking_id()
            dump_name = f"{tracking_id}.pcap"
            manifest_name = f"{tracking_id}.manifest"
            written: list[Path] = []
            try:
                for name, payload in (
                    (dump_name, write_capture_file(list(packets))),
                    (manifest_name, manifest_text.encode("utf-8")),
                ):
                    target = self.data_dir / name
                    tmp = self.data_dir / (name + ".tmp")
                    tmp.write_bytes(payload)
                    os.replace(tmp, target)
                    written.append(target)
                record = CallRecord(
                    tracking_id=tracking_id,
                    caller=caller,
                    callee=callee,
                    start_time=start_time,
                    duration_ms=duration_ms,
                    dump_path=dump_name,
                    manifest_path=manifest_name,
                    modulus=manifest_obj.modulus,
                    exponent=manifest_obj.exponent,
                    status=CallStatus.PENDING,
                )
                self._calls.append(record)
                try:
                    self._persist_calls()
                except Exception:
                    self._calls.pop()
                    raise
            except SeallinkError:
                for path in written:
                    path.unlink(missing_ok=True)
                raise
            except Exception as exc:
                for path in written:
                    path.unlink(missing_ok=True)
                raise IoFailure(f"store_call failed: {exc}") from exc
            return tracking_id

    def _find(self, tracking_id: str) -> CallRecord:
        for record in self._calls:
            if record.tracking_id == tracking_id:
                return record
        raise UnknownTrackingId(tracking_id)

    def confirm_call(self, tracking_id: str) -> None:
        with self._lock:
            record = self._find(tracking_id)
            if record.status is not CallStatus.STORED:
                record.status = CallStatus.STORED
                self._persist_calls()

    def delete_call(self, tracking_id: str) -> None:
        """Erase a call completely: dump, manifest and the metadata row.

        An unconfirmed call must leave no trace, so nothing of it
        survives, not even a tombstone.  Deleting an unknown id raises
        UnknownTrackingId.
        """
        with self._lock:
            record = self._find(tracking_id)
            for name in (record.dump_path, record.manifest_path):
                if name:
                    (self.data_dir / name).unlink(missing_ok=True)
            self._calls.remove(record)
            try:
                self._persist_calls()
            except Exception:
                self._calls.append(record)
                raise

    def list_calls(self, subscriber_id: str) -> list[CallRecord]:
        with self._lock:
            matches = [
                record
                for record in self._calls
                if record.status is CallStatus.STORED
                and subscriber_id in (record.caller, record.callee)
            ]
        matches.reverse()  # append order; newest stored last
        matches.sort(key=lambda r: r.start_time, reverse=True)
        return matches

    def all_calls(self) -> list[CallRecord]:
        with self._lock:
            return list(self._calls)

    def get_call(
        self, tracking_id: str
    ) -> tuple[CallRecord, list[CapturedPacket], ChainManifest]:
        with self._lock:
            record = self._find(tracking_id)
            if record.status is not CallStatus.STORED:
                raise NotStored(f"{tracking_id} is {record.status.value}")
            try:
                dump_bytes = (self.data_dir / record.dump_path).read_bytes()
                manifest_text = (self.data_dir / record.manifest_path).read_text("utf-8")
            except OSError as exc:
                raise IoFailure(f"call files unreadable: {exc}") from exc
        return record, parse_capture_file(dump_bytes), parse_manifest(manifest_text)

    def _persist_calls(self) -> None:
        payload = _save_calls(self._calls)
        target = self.data_dir / self.CALLS_FILE
        tmp = self.data_dir / (self.CALLS_FILE + ".tmp")
        try:
            tmp.write_bytes(payload)
            os.replace(tmp, target)
        except OSError as exc:
            tmp.unlink(missing_ok=True)
            raise IoFailure(f"could not write calls DB: {exc}") from exc


def _save_calls(calls: list[CallRecord]) -> bytes:
    root = ET.Element("Calls")
    for record in calls:
        element = ET.SubElement(root, "Call")
        ET.SubElement(element, "TrackingID").text = record.tracking_id
        ET.SubElement(element, "Caller").text = record.caller
        ET.SubElement(element, "Callee").text = record.callee
        ET.SubElement(element, "StartTime").text = record.start_time
        ET.SubElement(element, "DurationMs").text = str(record.duration_ms)
        ET.SubElement(element, "DumpPath").text = record.dump_path
        ET.SubElement(element, "ManifestPath").text = record.manifest_path
        ET.SubElement(element, "Modulus").text = (
            f"{record.modulus:x}" if record.modulus is not None else ""
        )
        ET.SubElement(element, "Exponent").text = (
            str(record.exponent) if record.exponent is not None else ""
        )
        ET.SubElement(element, "Status").text = record.status.value
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def _load_calls(xml: bytes) -> list[CallRecord]:
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise MalformedXml(f"calls DB: {exc}") from None
    if root.tag != "Calls":
        raise MalformedXml(f"calls DB root must be Calls, got {root.tag}")
    records: list[CallRecord] = []
    for element in root.findall("Call"):
        try:
            status = CallStatus((_child_text(element, "Status") or "").strip())
        except ValueError:
            raise MalformedXml("Call with unknown Status") from None
        modulus_text = (_child_text(element, "Modulus") or "").strip()
        exponent_text = (_child_text(element, "Exponent") or "").strip()
        tracking_id = (_child_text(element, "TrackingID") or "").strip()
        if not tracking_id:
            raise MalformedXml("Call without a TrackingID")
        try:
            records.append(
                CallRecord(
                    tracking_id=tracking_id,
                    caller=_child_text(element, "Caller") or "",
                    callee=_child_text(element, "Callee") or "",
                    start_time=_child_text(element, "StartTime") or "",
                    duration_ms=int(_child_text(element, "DurationMs") or "0"),
                    dump_path=(_child_text(element, "DumpPath") or "").strip(),
                    manifest_path=(_child_text(element, "ManifestPath") or "").strip(),
                    modulus=int(modulus_text, 16) if modulus_text else None,
                    exponent=int(exponent_text) if exponent_text else None,
                    status=status,
                )
            )
        except ValueError as exc:
            raise MalformedXml(f"Call {tracking_id}: {exc}") from None
    return records
