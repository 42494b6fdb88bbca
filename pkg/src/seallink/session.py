"""The signed-call session: initiation commands, state machine, driver.

A call session walks a fixed state graph from Standby to Completed or
Cancelled.  The machine itself is pure bookkeeping: advance() maps
(state, event) to a new state plus a list of actions, and anything not
in the transition table raises IllegalTransition.  Side effects
(authentication, recording, the signing pipeline, storage) live in
ActionExecutor, which interprets the actions against real components
under an injectable clock.

States
    Standby -> AwaitCallee -> AwaitPin -> CallingCallee ->
    AwaitCalleeConsent -> CallActive -> AwaitFinalConfirm ->
    Completed | Cancelled (terminal)

Recording exists from CallActive onward; every path that cancels after
that point deletes the stored call, so a cancelled session leaves no
call bytes behind.  Exactly one billable event is emitted, on final
confirmation, never before.
"""
from __future__ import annotations

import re
import socket
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from . import pipeline
from .chain import SignParams
from .errors import SeallinkError
from .pcap import CapturedPacket
from .rtp import generate_call_streams
from .storage import AuthStatus, Storage, UnknownTrackingId, iso_utc
from .transport import receive_session, send_session


class BadSyntax(SeallinkError):
    """Initiation command or script line does not match the grammar."""


class UnknownServiceCode(SeallinkError):
    """Command addresses a service code other than the configured one."""


class IllegalTransition(SeallinkError):
    """Event is not defined for the session's current state."""


class ScriptMismatch(SeallinkError):
    """Scripted authentication event contradicts the real PIN check."""


# -- initiation commands ---------------------------------------------------

class UssdForm(Enum):
    MENU = "Menu"
    DIRECT_DIAL = "DirectDial"
    SMS_INIT = "SmsInit"


@dataclass(frozen=True, slots=True)
class UssdCommand:
    form: UssdForm
    service_code: str
    callee: str | None = None
    pin: str | None = None


_MENU_RE = re.compile(r"^\*(\d+)#$")
_DIRECT_RE = re.compile(r"^\*(\d+)\*(\+?\d+)\*(\d+)#$")
_SMS_RE = re.compile(r"^(\+?\d+)\s+(\d+)$")


def parse_command(text: str, service_code: str = "123") -> UssdCommand:
    """Parse a signed-call initiation command.

    Three forms: `*<code>#` opens the menu, `*<code>*<callee>*<pin>#`
    dials directly, and `<callee> <pin>` is the SMS text form.
    """
    stripped = text.strip()
    if match := _MENU_RE.match(stripped):
        if match.group(1) != service_code:
            raise UnknownServiceCode(match.group(1))
        return UssdCommand(UssdForm.MENU, service_code)
    if match := _DIRECT_RE.match(stripped):
        if match.group(1) != service_code:
            raise UnknownServiceCode(match.group(1))
        return UssdCommand(
            UssdForm.DIRECT_DIAL, service_code, callee=match.group(2), pin=match.group(3)
        )
    if match := _SMS_RE.match(stripped):
        return UssdCommand(
            UssdForm.SMS_INIT, service_code, callee=match.group(1), pin=match.group(2)
        )
    raise BadSyntax(f"unrecognized command {text!r}")


# -- states, events, actions ------------------------------------------------

class State(Enum):
    STANDBY = "Standby"
    AWAIT_CALLEE = "AwaitCallee"
    AWAIT_PIN = "AwaitPin"
    CALLING_CALLEE = "CallingCallee"
    AWAIT_CALLEE_CONSENT = "AwaitCalleeConsent"
    CALL_ACTIVE = "CallActive"
    AWAIT_FINAL_CONFIRM = "AwaitFinalConfirm"
    COMPLETED = "Completed"
    CANCELLED = "Cancelled"


TERMINAL_STATES = frozenset({State.COMPLETED, State.CANCELLED})


class Event(Enum):
    USSD_RECEIVED = "UssdReceived"
    PIN_OK = "PinOk"
    PIN_FAIL = "PinFail"
    PIN_LOCKED = "PinLocked"
    CALLEE_ANSWERED = "CalleeAnswered"
    CALLEE_ACCEPT = "CalleeAccept"
    CALLEE_REJECT = "CalleeReject"
    CALLEE_UNREACHABLE = "CalleeUnreachable"
    HANGUP = "Hangup"
    NETWORK_DROP = "NetworkDrop"
    INTERNAL_ERROR = "InternalError"
    CONFIRM_YES = "ConfirmYes"
    CONFIRM_NO = "ConfirmNo"
    TIMEOUT = "Timeout"


@dataclass(frozen=True, slots=True)
class Authenticate:
    subscriber_id: str
    pin: str


@dataclass(frozen=True, slots=True)
class StartRecording:
    pass


@dataclass(frozen=True, slots=True)
class StopRecording:
    pass


@dataclass(frozen=True, slots=True)
class StoreCall:
    pass


@dataclass(frozen=True, slots=True)
class ConfirmCall:
    pass


@dataclass(frozen=True, slots=True)
class DeleteCall:
    pass


@dataclass(frozen=True, slots=True)
class Notify:
    channel: str  # USSD | SMS
    recipient: str
    text: str


@dataclass(frozen=True, slots=True)
class EmitBillable:
    caller: str


@dataclass(frozen=True, slots=True)
class PlayTone:
    pass


Action = object

@dataclass(frozen=True, slots=True)
class BillableEvent:
    caller: str
    tracking_id: str
    kind: str = "PerUsage"


@dataclass
class SessionContext:
    caller: str
    callee: str = ""
    channel: str = "USSD"
    tracking_id: str | None = None
    cancel_reason: str | None = None


class SignedCallSession:
    """The per-call state machine.

    advance(event, now, arg) applies one event and returns the actions
    the driver must execute.  Timed states expose a deadline; the
    driver feeds Timeout when the clock passes it.
    """

    TIMED_STATES = frozenset(
        {
            State.AWAIT_CALLEE,
            State.AWAIT_PIN,
            State.CALLING_CALLEE,
            State.AWAIT_CALLEE_CONSENT,
            State.AWAIT_FINAL_CONFIRM,
        }
    )

    def __init__(
        self,
        caller: str,
        service_code: str = "123",
        timeout_s: float = 120.0,
        now: float = 0.0,
    ) -> None:
        self.state = State.STANDBY
        self.context = SessionContext(caller=caller)
        self.service_code = service_code
        self.timeout_s = timeout_s
        self.entered_at = now

    @property
    def deadline(self) -> float | None:
        if self.state in self.TIMED_STATES:
            return self.entered_at + self.timeout_s
        return None

    @classmethod
    def transition_table(cls) -> dict[State, frozenset[Event]]:
        """Defined (state, event) pairs; everything else is illegal."""
        return {
            State.STANDBY: frozenset({Event.USSD_RECEIVED}),
            State.AWAIT_CALLEE: frozenset(
                {Event.USSD_RECEIVED, Event.TIMEOUT, Event.INTERNAL_ERROR}
            ),
            State.AWAIT_PIN: frozenset(
                {
                    Event.USSD_RECEIVED,
                    Event.PIN_OK,
                    Event.PIN_FAIL,
                    Event.PIN_LOCKED,
                    Event.TIMEOUT,
                    Event.INTERNAL_ERROR,
                }
            ),
            State.CALLING_CALLEE: frozenset(
                {
                    Event.CALLEE_ANSWERED,
                    Event.CALLEE_UNREACHABLE,
                    Event.HANGUP,
                    Event.TIMEOUT,
                    Event.INTERNAL_ERROR,
                }
            ),
            State.AWAIT_CALLEE_CONSENT: frozenset(
                {
                    Event.CALLEE_ACCEPT,
                    Event.CALLEE_REJECT,
                    Event.HANGUP,
                    Event.TIMEOUT,
                    Event.INTERNAL_ERROR,
                }
            ),
            State.CALL_ACTIVE: frozenset(
                {Event.HANGUP, Event.NETWORK_DROP, Event.INTERNAL_ERROR}
            ),
            State.AWAIT_FINAL_CONFIRM: frozenset(
                {
                    Event.CONFIRM_YES,
                    Event.CONFIRM_NO,
                    Event.TIMEOUT,
                    Event.INTERNAL_ERROR,
                }
            ),
            State.COMPLETED: frozenset(),
            State.CANCELLED: frozenset(),
        }

    def advance(self, event: Event, now: float, arg: str | None = None) -> list[Action]:
        if event not in self.transition_table()[self.state]:
            raise IllegalTransition(f"{event.value} in state {self.state.value}")
        handler = getattr(self, f"_on_{self.state.name.lower()}_{event.name.lower()}")
        new_state, actions = handler(arg)
        if new_state is not self.state:
            self.entered_at = now
        self.state = new_state
        return actions

    # -- helpers --

    def _notify_caller(self, text: str) -> Notify:
        return Notify(self.context.channel, self.context.caller, text)

    def _notify_callee(self, text: str) -> Notify:
        return Notify("USSD", self.context.callee, text)

    def _cancel(self, reason: str, actions: list[Action]) -> tuple[State, list[Action]]:
        self.context.cancel_reason = reason
        return State.CANCELLED, actions

    @staticmethod
    def _require_digits(arg: str | None, what: str) -> str:
        if arg is None or not re.fullmatch(r"\+?\d+", arg.strip()):
            raise BadSyntax(f"expected {what}, got {arg!r}")
        return arg.strip()

    # -- Standby --

    def _on_standby_ussd_received(self, arg: str | None):
        if arg is None:
            raise BadSyntax("initiation command required")
        command = parse_command(arg, self.service_code)
        if command.form is UssdForm.MENU:
            return State.AWAIT_CALLEE, [
                self._notify_caller("Signed call: enter the callee number.")
            ]
        self.context.callee = command.callee or ""
        if command.form is UssdForm.SMS_INIT:
            self.context.channel = "SMS"
        return State.AWAIT_PIN, [
            Authenticate(self.context.caller, command.pin or "")
        ]

    # -- AwaitCallee --

    def _on_await_callee_ussd_received(self, arg: str | None):
        self.context.callee = self._require_digits(arg, "callee number")
        return State.AWAIT_PIN, [self._notify_caller("Enter your service PIN.")]

    def _on_await_callee_timeout(self, arg):
        return self._cancel("Timeout", [self._notify_caller("Session timed out.")])

    def _on_await_callee_internal_error(self, arg):
        return self._cancel(
            "InternalError", [self._notify_caller("Internal error; session cancelled.")]
        )

    # -- AwaitPin --

    def _on_await_pin_ussd_received(self, arg: str | None):
        pin = self._require_digits(arg, "PIN digits")
        return State.AWAIT_PIN, [Authenticate(self.context.caller, pin)]

    def _on_await_pin_pin_ok(self, arg):
        return State.CALLING_CALLEE, [
            self._notify_caller(f"PIN accepted; calling {self.context.callee}.")
        ]

    def _on_await_pin_pin_fail(self, arg):
        return State.AWAIT_PIN, [
            self._notify_caller("PIN incorrect; enter your service PIN.")
        ]

    def _on_await_pin_pin_locked(self, arg):
        return self._cancel(
            "PinLocked",
            [self._notify_caller("Too many wrong PINs; signed-call service is locked.")],
        )

    def _on_await_pin_timeout(self, arg):
        return self._cancel("Timeout", [self._notify_caller("Session timed out.")])

    def _on_await_pin_internal_error(self, arg):
        return self._cancel(
            "InternalError", [self._notify_caller("Internal error; session cancelled.")]
        )

    # -- CallingCallee --

    def _on_calling_callee_callee_answered(self, arg):
        return State.AWAIT_CALLEE_CONSENT, [
            self._notify_callee(
                "This call will be recorded and signed. Press 1 to accept, 2 to reject."
            )
        ]

    def _on_calling_callee_callee_unreachable(self, arg):
        return self._cancel(
            "CalleeUnreachable",
            [self._notify_caller("Callee unreachable or not registered; signed call not started.")],
        )

    def _on_calling_callee_hangup(self, arg):
        return self._cancel("Hangup", [self._notify_caller("Call attempt cancelled.")])

    def _on_calling_callee_timeout(self, arg):
        return self._cancel("Timeout", [self._notify_caller("No answer; signed call cancelled.")])

    def _on_calling_callee_internal_error(self, arg):
        return self._cancel(
            "InternalError", [self._notify_caller("Internal error; session cancelled.")]
        )

    # -- AwaitCalleeConsent --

    def _on_await_callee_consent_callee_accept(self, arg):
        return State.CALL_ACTIVE, [
            StartRecording(),
            self._notify_caller("Callee accepted; recording started."),
            self._notify_callee("Recording started."),
        ]

    def _on_await_callee_consent_callee_reject(self, arg):
        return self._cancel(
            "CalleeReject", [self._notify_caller("Callee rejected the signed call.")]
        )

    def _on_await_callee_consent_hangup(self, arg):
        return self._cancel("Hangup", [self._notify_callee("Caller cancelled the signed call.")])

    def _on_await_callee_consent_timeout(self, arg):
        return self._cancel(
            "Timeout", [self._notify_caller("No consent from callee; cancelled.")]
        )

    def _on_await_callee_consent_internal_error(self, arg):
        return self._cancel(
            "InternalError", [self._notify_caller("Internal error; session cancelled.")]
        )

    # -- CallActive --

    def _on_call_active_hangup(self, arg):
        return State.AWAIT_FINAL_CONFIRM, [
            StopRecording(),
            StoreCall(),
            self._notify_caller("Call ended. Confirm the signed call? (yes/no)"),
        ]

    def _on_call_active_network_drop(self, arg):
        return State.AWAIT_FINAL_CONFIRM, [
            StopRecording(),
            StoreCall(),
            self._notify_caller("Call ended unexpectedly (network)."),
            self._notify_callee("Call ended unexpectedly (network)."),
            self._notify_caller("Confirm the signed call? (yes/no)"),
        ]

    def _on_call_active_internal_error(self, arg):
        return self._cancel(
            "InternalError",
            [
                StopRecording(),
                DeleteCall(),
                self._notify_caller("Internal error; signed call cancelled and deleted."),
                self._notify_callee("Internal error; signed call cancelled and deleted."),
                PlayTone(),
            ],
        )

    # -- AwaitFinalConfirm --

    def _on_await_final_confirm_confirm_yes(self, arg):
        tracking = self.context.tracking_id or ""
        text = f"Signed call stored. Tracking number: {tracking}"
        return State.COMPLETED, [
            ConfirmCall(),
            Notify("SMS", self.context.caller, text),
            Notify("SMS", self.context.callee, text),
            EmitBillable(self.context.caller),
        ]

    def _on_await_final_confirm_confirm_no(self, arg):
        return self._cancel(
            "ConfirmNo",
            [DeleteCall(), self._notify_caller("Signed call discarded and deleted.")],
        )

    def _on_await_final_confirm_timeout(self, arg):
        return self._cancel(
            "Timeout",
            [DeleteCall(), self._notify_caller("Confirmation timed out; call deleted.")],
        )

    def _on_await_final_confirm_internal_error(self, arg):
        return self._cancel(
            "InternalError",
            [
                DeleteCall(),
                self._notify_caller("Internal error; signed call cancelled and deleted."),
                self._notify_callee("Internal error; signed call cancelled and deleted."),
                PlayTone(),
            ],
        )


# -- execution ---------------------------------------------------------------

class VirtualClock:
    """Injectable time source; tests advance it explicitly."""

    def __init__(self, start: float = 1_420_070_400.0) -> None:
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("clock only moves forward")
        self._now += seconds


@dataclass
class RunConfig:
    """Everything a session run needs beyond caller/callee identities."""

    duration_s: float = 2.0
    interval_ms: float = 20.0
    seed: int | None = None
    chunk_size: int = 5
    group_size: int = 5
    chunk_seconds: float = 5.0
    hash_algo: str = "sha256"
    sig_algo: str = "SHA256withRSA"
    key_bits: int = 2048
    allow_insecure: bool = False
    keygen_seed: int | None = None
    watermark: str | None = None
    service_code: str = "123"
    timeout_s: float = 120.0
    use_transport: bool = True
    # scenario knobs for run_signed_call
    pins: tuple[str, ...] = ("0000",)
    callee_response: str = "accept"  # accept | reject | unreachable | ring_timeout | hangup
    end: str = "hangup"  # hangup | network_drop | internal_error
    confirm: str = "yes"  # yes | no | timeout | internal_error


class ActionExecutor:
    """Interprets machine actions against storage, pipeline and transport."""

    def __init__(
        self,
        storage: Storage,
        config: RunConfig,
        clock: VirtualClock | None = None,
        streams: tuple[list[CapturedPacket], list[CapturedPacket]] | None = None,
        sink: Callable[[str], None] | None = None,
    ) -> None:
        self.storage = storage
        self.config = config
        self.clock = clock or VirtualClock()
        self._streams = streams
        self.notifications: list[Notify] = []
        self.billables: list[BillableEvent] = []
        self.tones = 0
        self.last_auth = None
        self._recording: tuple[list[CapturedPacket], list[CapturedPacket]] | None = None
        self._recording_started: float | None = None
        self._sink = sink

    def _emit(self, line: str) -> None:
        if self._sink is not None:
            self._sink(line)

    def derived_auth_event(self) -> Event:
        """Map the most recent authentication result to a machine event."""
        if self.last_auth is None:
            raise ScriptMismatch("no authentication has run yet")
        return {
            AuthStatus.OK: Event.PIN_OK,
            AuthStatus.FAIL: Event.PIN_FAIL,
            AuthStatus.LOCKED: Event.PIN_LOCKED,
        }[self.last_auth.status]

    def execute(self, session: SignedCallSession, actions: list[Action]) -> None:
        for action in actions:
            if isinstance(action, Authenticate):
                self.last_auth = self.storage.authenticate(
                    action.subscriber_id, action.pin, self.clock.now()
                )
                self._emit(f"AUTH {action.subscriber_id}: {self.last_auth.status.value}")
            elif isinstance(action, StartRecording):
                if self._streams is not None:
                    self._recording = self._streams
                else:
                    self._recording = generate_call_streams(
                        self.config.duration_s, self.config.interval_ms, self.config.seed
                    )
                self._recording_started = self.clock.now()
                self._emit("RECORDING started")
            elif isinstance(action, StopRecording):
                self._emit("RECORDING stopped")
            elif isinstance(action, StoreCall):
                tracking_id = self._run_store(session)
                session.context.tracking_id = tracking_id
                self._emit(f"STORED pending confirmation, tracking {tracking_id}")
            elif isinstance(action, ConfirmCall):
                assert session.context.tracking_id is not None
                self.storage.confirm_call(session.context.tracking_id)
                self._emit(f"CONFIRMED {session.context.tracking_id}")
            elif isinstance(action, DeleteCall):
                self._recording = None
                if session.context.tracking_id is not None:
                    self.storage.delete_call(session.context.tracking_id)
                    self._emit(f"DELETED {session.context.tracking_id}")
            elif isinstance(action, Notify):
                self.notifications.append(action)
                self._emit(f"NOTIFY [{action.channel} -> {action.recipient}] {action.text}")
            elif isinstance(action, EmitBillable):
                event = BillableEvent(
                    caller=action.caller,
                    tracking_id=session.context.tracking_id or "",
                )
                self.billables.append(event)
                self._emit(f"BILLABLE {event.kind} caller={event.caller} tracking={event.tracking_id}")
            elif isinstance(action, PlayTone):
                self.tones += 1
                self._emit("TONE error beep")
            else:
                raise SeallinkError(f"unknown action {action!r}")

    def _run_store(self, session: SignedCallSession) -> str:
        if self._recording is None:
            raise SeallinkError("no recording to store")
        first, second = self._recording
        config = self.config
        started = self._recording_started or self.clock.now()
        call_id = f"{session.context.caller}~{session.context.callee}~{int(started)}"
        params = SignParams(
            call_id=call_id,
            hash_algo=config.hash_algo,
            sig_algo=config.sig_algo,
            key_bits=config.key_bits,
            chunk_size=config.chunk_size,
            group_size=config.group_size,
            chunk_seconds=config.chunk_seconds,
            allow_insecure=config.allow_insecure,
            keygen_seed=config.keygen_seed,
        )
        result = pipeline.run_sign_pipeline(
            list(first), list(second), params, watermark_text=config.watermark
        )
        start_iso = iso_utc(started)
        caller = session.context.caller
        callee = session.context.callee
        if config.use_transport:
            left, right = socket.socketpair()
            try:
                sender = threading.Thread(
                    target=send_session,
                    args=(left, result.stream.packets, result.manifest),
                    kwargs={"caller": caller, "callee": callee, "start_time": start_iso},
                )
                sender.start()
                received = receive_session(right)
                sender.join()
            finally:
                left.close()
                right.close()
            return self.storage.store_call(
                received.packets,
                received.manifest_text,
                received.caller,
                received.callee,
                received.start_time,
            )
        return self.storage.store_call(
            result.stream.packets, result.manifest, caller, callee, start_iso
        )


# -- scripts -----------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class TraceEntry:
    state_before: State
    event: Event
    state_after: State
    actions: tuple[Action, ...]

    def __str__(self) -> str:
        names = ",".join(type(a).__name__ for a in self.actions) or "-"
        return (
            f"{self.state_before.value} --{self.event.value}--> "
            f"{self.state_after.value} [{names}]"
        )


_EVENT_BY_NAME = {event.value: event for event in Event}


@dataclass(frozen=True, slots=True)
class ScriptStep:
    kind: str  # event | advance
    event: Event | None = None
    arg: str | None = None
    seconds: float = 0.0


def parse_script(text: str) -> list[ScriptStep]:
    """Parse the line-oriented scenario format.

    `EVENT <Name> [arg]` feeds one event (the rest of the line is the
    argument); `ADVANCE <seconds>` moves the virtual clock; blank lines
    and `#` comments are skipped.
    """
    steps: list[ScriptStep] = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 2)
        directive = parts[0].upper()
        if directive == "EVENT":
            if len(parts) < 2:
                raise BadSyntax(f"line {lineno}: EVENT needs a name")
            event = _EVENT_BY_NAME.get(parts[1])
            if event is None:
                raise BadSyntax(f"line {lineno}: unknown event {parts[1]!r}")
            arg = parts[2] if len(parts) > 2 else None
            steps.append(ScriptStep("event", event=event, arg=arg))
        elif directive == "ADVANCE":
            if len(parts) != 2:
                raise BadSyntax(f"line {lineno}: ADVANCE needs seconds")
            try:
                seconds = float(parts[1])
            except ValueError:
                raise BadSyntax(f"line {lineno}: bad seconds {parts[1]!r}") from None
            steps.append(ScriptStep("advance", seconds=seconds))
        else:
            raise BadSyntax(f"line {lineno}: unknown directive {parts[0]!r}")
    return steps


_AUTH_EVENTS = frozenset({Event.PIN_OK, Event.PIN_FAIL, Event.PIN_LOCKED})


def run_script(
    script_text: str,
    session: SignedCallSession,
    executor: ActionExecutor,
) -> list[TraceEntry]:
    """Replay a scenario script against a machine with real actions.

    Scripted PinOk/PinFail/PinLocked events are cross-checked against
    what authentication actually returned, so scripts cannot drive the
    machine into states the credentials would not allow.
    """
    trace: list[TraceEntry] = []
    for step in parse_script(script_text):
        if step.kind == "advance":
            executor.clock.advance(step.seconds)
            continue
        assert step.event is not None
        if step.event in _AUTH_EVENTS:
            actual = executor.derived_auth_event()
            if actual is not step.event:
                raise ScriptMismatch(
                    f"script says {step.event.value}, authentication says {actual.value}"
                )
        before = session.state
        actions = session.advance(step.event, executor.clock.now(), step.arg)
        executor.execute(session, actions)
        entry = TraceEntry(before, step.event, session.state, tuple(actions))
        trace.append(entry)
        executor._emit(str(entry))
    return trace


# -- one-call orchestration ----------------------------------------------------

@dataclass
class SessionOutcome:
    state: State
    tracking_id: str | None
    reason: str | None
    notifications: list[Notify]
    billables: list[BillableEvent]
    trace: list[TraceEntry]

    @property
    def completed(self) -> bool:
        return self.state is State.COMPLETED


def run_signed_call(
    caller: str,
    callee: str,
    streams: tuple[list[CapturedPacket], list[CapturedPacket]] | None,
    config: RunConfig,
    storage: Storage,
    clock: VirtualClock | None = None,
    sink: Callable[[str], None] | None = None,
) -> SessionOutcome:
    """Drive one signed call end to end against real components.

    The scenario fields of config decide how the callee responds, how
    the call ends, and how the caller confirms.  Any unexpected failure
    maps to the InternalError path, which cancels the session and
    deletes whatever was stored.
    """
    clock = clock or VirtualClock()
    session = SignedCallSession(
        caller, service_code=config.service_code, timeout_s=config.timeout_s, now=clock.now()
    )
    executor = ActionExecutor(storage, config, clock, streams, sink)
    trace: list[TraceEntry] = []

    def step(event: Event, arg: str | None = None) -> None:
        before = session.state
        actions = session.advance(event, clock.now(), arg)
        executor.execute(session, actions)
        entry = TraceEntry(before, event, session.state, tuple(actions))
        trace.append(entry)
        executor._emit(str(entry))

    try:
        if not storage.is_registered(caller):
            session.context.cancel_reason = "CallerUnregistered"
            session.state = State.CANCELLED
            executor.execute(
                session,
                [Notify("USSD", caller, "Caller not registered for signed calls.")],
            )
        else:
            step(
                Event.USSD_RECEIVED,
                f"*{config.service_code}*{callee}*{config.pins[0]}#",
            )
            remaining_pins = list(config.pins[1:])
            while session.state is State.AWAIT_PIN:
                step(executor.derived_auth_event())
                if session.state is State.AWAIT_PIN:
                    if not remaining_pins:
                        step(Event.TIMEOUT)
                        break
                    step(Event.USSD_RECEIVED, remaining_pins.pop(0))
            if session.state is State.CALLING_CALLEE:
                if not storage.is_registered(callee):
                    step(Event.CALLEE_UNREACHABLE)
                elif config.callee_response == "accept":
                    step(Event.CALLEE_ANSWERED)
                    step(Event.CALLEE_ACCEPT)
                elif config.callee_response == "reject":
                    step(Event.CALLEE_ANSWERED)
                    step(Event.CALLEE_REJECT)
                elif config.callee_response == "unreachable":
                    step(Event.CALLEE_UNREACHABLE)
                elif config.callee_response == "ring_timeout":
                    step(Event.TIMEOUT)
                elif config.callee_response == "hangup":
                    step(Event.HANGUP)
                else:
                    raise ValueError(f"bad callee_response {config.callee_response!r}")
            if session.state is State.CALL_ACTIVE:
                clock.advance(config.duration_s)
                event = {
                    "hangup": Event.HANGUP,
                    "network_drop": Event.NETWORK_DROP,
                    "internal_error": Event.INTERNAL_ERROR,
                }.get(config.end)
                if event is None:
                    raise ValueError(f"bad end {config.end!r}")
                step(event)
            if session.state is State.AWAIT_FINAL_CONFIRM:
                event = {
                    "yes": Event.CONFIRM_YES,
                    "no": Event.CONFIRM_NO,
                    "timeout": Event.TIMEOUT,
                    "internal_error": Event.INTERNAL_ERROR,
                }.get(config.confirm)
                if event is None:
                    raise ValueError(f"bad confirm {config.confirm!r}")
                step(event)
    except Exception as exc:  # noqa: BLE001 - any failure must cancel cleanly
        if session.state not in TERMINAL_STATES:
            try:
                step(Event.INTERNAL_ERROR)
            except SeallinkError:
                session.state = State.CANCELLED
            if session.context.cancel_reason is None:
                session.context.cancel_reason = "InternalError"
        session.context.cancel_reason = f"InternalError: {exc}"
        if session.context.tracking_id is not None:
            try:
                storage.delete_call(session.context.tracking_id)
            except UnknownTrackingId:
                pass  # the InternalError transition already erased it

    return SessionOutcome(
        state=session.state,
        tracking_id=session.context.tracking_id,
        reason=session.context.cancel_reason,
        notifications=executor.notifications,
        billables=executor.billables,
        trace=trace,
    )
