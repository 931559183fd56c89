// placeholder: implementation follows
namespace expredit { namespace { int unused_trainer = 0; } }
