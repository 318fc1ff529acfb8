import pytest

from memverse.errors import (
    CaptionerUnavailable,
    ConfigInvalid,
    ModalityMismatch,
)
from memverse.ingest import CaptionerConfig, CaptionerRegistry
from memverse.types import ManualClock, MediaRef, Modality


@pytest.fixture
def registry(clock):
    r = CaptionerRegistry(clock=clock)
    for m in (Modality.IMAGE, Modality.AUDIO, Modality.VIDEO):
        r.register_captioner(CaptionerConfig(modality=m, frame_sample_count=3))
    return r


def test_mock_image_caption(registry):
    media = MediaRef.make("file:///photos/milo.jpg", Modality.IMAGE)
    assert registry.describe(media).text == "image: milo"


def test_mock_video_caption_includes_frames(registry):
    media = MediaRef.make("file:///v/cat.mp4", Modality.VIDEO)
    assert registry.describe(media).text == "video: cat [frames=3]"


def test_mock_audio_caption(registry):
    media = MediaRef.make("file:///a/note.wav", Modality.AUDIO)
    assert registry.describe(media).text == "audio transcript: note"


def test_modality_mismatch(registry):
    media = MediaRef.make("file:///a/note.wav", Modality.AUDIO)
    with pytest.raises(ModalityMismatch):
        registry.describe(media, CaptionerConfig(modality=Modality.IMAGE))


def test_mock_determinism(registry):
    media = MediaRef.make("http://host/x/y/photo.png", Modality.IMAGE)
    assert registry.describe(media).text == registry.describe(media).text


def test_unregistered_modality(clock):
    registry = CaptionerRegistry(clock=clock)
    with pytest.raises(CaptionerUnavailable):
        registry.describe(MediaRef.make("file:///x.jpg", Modality.IMAGE))


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        CaptionerConfig(modality=Modality.VIDEO, frame_sample_count=0).validate()
    with pytest.raises(ConfigInvalid):
        CaptionerConfig(modality=Modality.IMAGE, timeout_ms=0).validate()


def test_reregister_replaces_model_name(registry):
    registry.register_captioner(
        CaptionerConfig(modality=Modality.IMAGE, model_name="v2"))
    media = MediaRef.make("file:///p.jpg", Modality.IMAGE)
    assert registry.describe(media).captioner == "v2"


def test_ingest_media_attaches_ref(registry, store):
    media = MediaRef.make("file:///photos/milo.jpg", Modality.IMAGE)
    cid = registry.ingest_media(store, media, "s1", 0)
    chunk = store.get_chunk(cid)
    assert chunk.media == [media]
    assert chunk.content == "image: milo"


def test_ingest_two_media_sequences(registry, store):
    a = registry.ingest_media(store, MediaRef.make("file:///a.jpg", Modality.IMAGE), "s1", 0)
    b = registry.ingest_media(store, MediaRef.make("file:///b.jpg", Modality.IMAGE), "s1", 1)
    assert (a.sequence, b.sequence) == (0, 1)
